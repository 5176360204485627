#include "ego2front/config.hpp"
#include "ego2front/datapipe.hpp"
#include "ego2front/error.hpp"
#include "ego2front/perceptual.hpp"
#include "ego2front/quality.hpp"
#include "ego2front/schedule.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace ego2front;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

torch::Tensor to_tensor(const Array& a, torch::ScalarType dtype = torch::kDouble) {
    std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
    return torch::from_blob(const_cast<double*>(a.data()), shape, torch::kDouble).clone().to(dtype);
}

Array to_array(const torch::Tensor& t) {
    auto c = t.detach().to(torch::kDouble).contiguous();
    std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
    Array out(shape);
    std::memcpy(out.mutable_data(), c.data_ptr<double>(), static_cast<size_t>(c.numel()) * sizeof(double));
    return out;
}

ValueRange range_of(std::pair<double, double> r) { return {r.first, r.second}; }

py::dict transform_dict(const FrontalTransform& t) {
    py::dict d;
    d["zoom"] = t.zoom;
    d["shift_x"] = t.shift_x;
    d["shift_y"] = t.shift_y;
    d["rotation_deg"] = t.rotation_deg;
    return d;
}

FrameRecord frame_from(const py::dict& d) {
    FrameRecord r;
    r.id = d["id"].cast<std::string>();
    r.timestamp = d["timestamp"].cast<double>();
    if (d.contains("path")) r.path = d["path"].cast<std::string>();
    if (d.contains("pose")) r.pose = d["pose"].cast<std::vector<double>>();
    if (d.contains("subject_id")) r.subject_id = d["subject_id"].cast<std::string>();
    if (d.contains("pose_mask_path")) r.pose_mask_path = d["pose_mask_path"].cast<std::string>();
    return r;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Core numerics of the ego2front pipeline";

    auto user_error = py::register_exception<UserError>(m, "UserError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", user_error);
    py::register_exception<RangeError>(m, "RangeError", user_error);

    py::class_<NoiseSchedule>(m, "NoiseSchedule")
        .def_static("linear", &NoiseSchedule::linear, py::arg("steps") = 1000, py::arg("beta_start") = 1e-4,
                    py::arg("beta_end") = 0.02)
        .def_static("from_betas", &NoiseSchedule::from_betas, py::arg("betas"))
        .def_property_readonly("steps", &NoiseSchedule::steps)
        .def("beta", &NoiseSchedule::beta)
        .def("alpha_bar", &NoiseSchedule::alpha_bar)
        .def_property_readonly("betas",
                               [](const NoiseSchedule& s) { return std::vector<double>(s.betas().begin(), s.betas().end()); })
        .def_property_readonly("alpha_bars", [](const NoiseSchedule& s) {
            return std::vector<double>(s.alpha_bars().begin(), s.alpha_bars().end());
        });

    m.def(
        "forward_noise",
        [](const Array& z0, int64_t t, const Array& eps, const NoiseSchedule& s) {
            return to_array(forward_noise(to_tensor(z0), t, to_tensor(eps), s));
        },
        py::arg("z0"), py::arg("t"), py::arg("eps"), py::arg("schedule"));
    m.def(
        "predict_x0_from_eps",
        [](const Array& z_t, const Array& eps_hat, int64_t t, const NoiseSchedule& s) {
            return to_array(predict_x0_from_eps(to_tensor(z_t), to_tensor(eps_hat), t, s));
        },
        py::arg("z_t"), py::arg("eps_hat"), py::arg("t"), py::arg("schedule"));
    m.def("sampling_timesteps", &sampling_timesteps, py::arg("total_steps"), py::arg("steps"));

    m.def(
        "psnr",
        [](const Array& pred, const Array& gt, const Array& mask, std::pair<double, double> range, double cap) {
            return psnr(ImageTensor(to_tensor(pred), range_of(range)), ImageTensor(to_tensor(gt), range_of(range)),
                        to_tensor(mask) > 0.5, cap);
        },
        py::arg("pred"), py::arg("gt"), py::arg("mask"), py::arg("value_range") = std::pair{0.0, 1.0},
        py::arg("cap") = kPsnrCap);
    m.def(
        "ssim",
        [](const Array& pred, const Array& gt, const Array& mask, std::pair<double, double> range) {
            return ssim(ImageTensor(to_tensor(pred), range_of(range)), ImageTensor(to_tensor(gt), range_of(range)),
                        to_tensor(mask) > 0.5);
        },
        py::arg("pred"), py::arg("gt"), py::arg("mask"), py::arg("value_range") = std::pair{0.0, 1.0});
    m.def(
        "split_regions",
        [](const Array& mask, double hip_fraction) {
            auto r = split_regions(PoseMask{to_tensor(mask, torch::kFloat)}, hip_fraction);
            py::dict d;
            d["full"] = to_array(r.full);
            d["upper"] = to_array(r.upper);
            d["lower"] = to_array(r.lower);
            return d;
        },
        py::arg("mask"), py::arg("hip_fraction") = 0.5);
    m.def(
        "perceptual_distance",
        [](const Array& a, const Array& b, std::optional<std::string> scripted) {
            std::unique_ptr<PerceptualMetric> metric;
            if (scripted) {
                metric = std::make_unique<ScriptedPerceptualMetric>(*scripted);
            } else {
                metric = std::make_unique<FeatureDistanceMetric>();
            }
            torch::NoGradGuard no_grad;
            return perceptual_distance(*metric, ImageTensor(to_tensor(a, torch::kFloat)),
                                       ImageTensor(to_tensor(b, torch::kFloat)));
        },
        py::arg("a"), py::arg("b"), py::arg("scripted_module") = py::none(),
        "Distance between two (C, H, W) images in [-1, 1]; optionally through a TorchScript module.");

    m.def(
        "borda_aggregate",
        [](const std::vector<std::vector<std::string>>& rankings) {
            std::vector<Ballot> ballots;
            for (size_t i = 0; i < rankings.size(); ++i) ballots.push_back({"b" + std::to_string(i), rankings[i]});
            const auto agg = borda_aggregate(ballots);
            py::list out;
            for (const auto& s : agg.methods) {
                py::dict d;
                d["method"] = s.method;
                d["borda_score"] = s.borda_score;
                d["mean_rank"] = s.mean_rank;
                out.append(d);
            }
            return out;
        },
        py::arg("rankings"), "Rankings are lists of method names, best first.");
    m.def(
        "clothing_accuracy",
        [](const std::vector<std::pair<std::string, std::string>>& predicted,
           const std::vector<std::pair<std::string, std::string>>& truth) {
            const auto a = clothing_accuracy(predicted, truth);
            py::dict d;
            d["samples"] = a.samples;
            d["lower_percent"] = a.lower_percent;
            d["upper_percent"] = a.upper_percent;
            d["formatted"] = a.formatted();
            return d;
        },
        py::arg("predicted"), py::arg("truth"), "Labels are (lower, upper) garment name pairs.");

    m.def("assign_split", &assign_split, py::arg("frontal_id"), py::arg("val_percent") = 15);
    m.def(
        "pair_samples",
        [](const std::vector<py::dict>& ego, const std::vector<py::dict>& frontal, double window, int64_t per_frontal) {
            std::vector<FrameRecord> e, f;
            for (const auto& d : ego) e.push_back(frame_from(d));
            for (const auto& d : frontal) f.push_back(frame_from(d));
            const auto result = pair_samples(e, f, window, per_frontal);
            py::list entries, dropped;
            for (const auto& s : result.manifest.entries) {
                py::dict d;
                d["frontal_id"] = s.frontal_id;
                d["ego_paths"] = s.ego_paths;
                d["ego_timestamps"] = s.ego_timestamps;
                d["split"] = s.split;
                entries.append(d);
            }
            for (const auto& r : result.dropped) dropped.append(py::make_tuple(r.frontal_id, r.reason));
            return py::make_tuple(entries, dropped);
        },
        py::arg("ego"), py::arg("frontal"), py::arg("window") = 5.0, py::arg("per_frontal") = 10,
        "Frames are dicts with id, timestamp and optionally path and pose; streams sorted by timestamp.");

    m.def(
        "augment_frontal",
        [](const Array& image, const Array& mask, double q, uint64_t seed) {
            auto r = augment_frontal(to_tensor(image, torch::kFloat), to_tensor(mask, torch::kFloat), q, seed);
            return py::make_tuple(to_array(r.image), to_array(r.mask), r.applied, transform_dict(r.transform));
        },
        py::arg("image"), py::arg("mask"), py::arg("q"), py::arg("seed"));
    m.def(
        "augment_ego",
        [](const Array& image, double p, uint64_t seed) {
            auto r = augment_ego(to_tensor(image, torch::kFloat), p, seed);
            return py::make_tuple(to_array(r.image), r.applied, r.angle_deg);
        },
        py::arg("image"), py::arg("p"), py::arg("seed"));

    m.def(
        "config_digest",
        [](const std::string& text) { return parse_config(text).digest(); }, py::arg("text"));
}
