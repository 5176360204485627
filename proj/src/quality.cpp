#include "ego2front/quality.hpp"

#include "ego2front/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace ego2front {

namespace {

torch::Tensor as_plane_mask(const torch::Tensor& mask, int64_t h, int64_t w) {
    auto m = mask;
    if (m.dim() == 3 && m.size(0) == 1) m = m.squeeze(0);
    if (m.dim() != 2 || m.size(0) != h || m.size(1) != w) {
        throw ShapeError("mask " + shape_string(mask) + " does not match image " + std::to_string(h) + "x" +
                         std::to_string(w));
    }
    return m.scalar_type() == torch::kBool ? m : (m > 0.5);
}

void require_pair(const ImageTensor& pred, const ImageTensor& gt) {
    if (pred.batched() || gt.batched()) throw ShapeError("metrics take single (C,H,W) images");
    if (!pred.data().sizes().equals(gt.data().sizes())) {
        throw ShapeError("prediction " + shape_string(pred.data()) + " and ground truth " + shape_string(gt.data()) +
                         " differ in shape");
    }
}

torch::Tensor gaussian_window(int64_t size, double sigma) {
    auto x = torch::arange(size, torch::kDouble) - (size - 1) / 2.0;
    auto g = torch::exp(-(x * x) / (2 * sigma * sigma));
    g = g / g.sum();
    return torch::outer(g, g);
}

std::string pct(double v) { return std::to_string(static_cast<int>(std::lround(v))); }

}  // namespace

void RegionMasks::validate() const {
    if (!full.defined() || !upper.defined() || !lower.defined()) throw ShapeError("region masks undefined");
    if (!upper.sizes().equals(full.sizes()) || !lower.sizes().equals(full.sizes())) {
        throw ShapeError("region masks differ in shape");
    }
    if ((upper & lower).any().item<bool>()) throw RangeError("upper and lower regions overlap");
    if (((upper | lower) & ~full).any().item<bool>()) throw RangeError("regions extend outside the silhouette");
}

RegionMasks split_regions(const PoseMask& pose_mask, double hip_fraction) {
    if (!(hip_fraction >= 0.0 && hip_fraction <= 1.0)) throw RangeError("hip_fraction must lie in [0, 1]");
    auto data = pose_mask.data;
    if (!data.defined() || data.dim() < 2) throw ShapeError("pose mask must be (H,W) or (1,H,W)");
    while (data.dim() > 2) {
        if (data.size(0) != 1) throw ShapeError("pose mask must be single-channel, got " + shape_string(data));
        data = data.squeeze(0);
    }
    RegionMasks r;
    r.full = data > 0.5;
    auto rows = r.full.any(1).nonzero();
    if (rows.numel() == 0) throw RangeError("pose mask silhouette is empty");
    const auto top = rows.min().item<int64_t>();
    const auto bottom = rows.max().item<int64_t>();
    const double hip = static_cast<double>(top) + hip_fraction * static_cast<double>(bottom - top + 1);
    auto row_index = torch::arange(data.size(0), torch::kDouble).unsqueeze(1).expand_as(data);
    r.upper = r.full & (row_index < hip);
    r.lower = r.full & (row_index >= hip);
    return r;
}

double psnr(const ImageTensor& pred, const ImageTensor& gt, const torch::Tensor& mask, double cap) {
    require_pair(pred, gt);
    auto m = as_plane_mask(mask, pred.height(), pred.width());
    const auto count = m.sum().item<int64_t>();
    if (count == 0) throw RangeError("psnr: mask is empty");
    auto diff = (pred.unit().to(torch::kDouble) - gt.unit().to(torch::kDouble)).pow(2);
    const double mse = diff.masked_select(m.unsqueeze(0).expand_as(diff)).mean().item<double>();
    if (mse <= 0.0) return cap;
    return std::min(cap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const ImageTensor& pred, const ImageTensor& gt, const torch::Tensor& mask) {
    constexpr int64_t kWin = 11;
    constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
    require_pair(pred, gt);
    if (pred.height() < kWin || pred.width() < kWin) {
        throw ShapeError("ssim: image " + shape_string(pred.data()) + " smaller than the 11x11 window");
    }
    auto m = as_plane_mask(mask, pred.height(), pred.width());
    if (!m.any().item<bool>()) throw RangeError("ssim: mask is empty");

    const auto c = pred.channels();
    auto x = pred.unit().to(torch::kDouble).unsqueeze(1);  // (C,1,H,W)
    auto y = gt.unit().to(torch::kDouble).unsqueeze(1);
    auto w = gaussian_window(kWin, 1.5).view({1, 1, kWin, kWin});
    auto filt = [&](const torch::Tensor& t) { return torch::conv2d(t, w); };
    auto mx = filt(x), my = filt(y);
    auto sxx = filt(x * x) - mx * mx;
    auto syy = filt(y * y) - my * my;
    auto sxy = filt(x * y) - mx * my;
    auto map = ((2 * mx * my + kC1) * (2 * sxy + kC2)) / ((mx * mx + my * my + kC1) * (sxx + syy + kC2));

    const int64_t half = kWin / 2;
    auto centers = m.slice(0, half, m.size(0) - half).slice(1, half, m.size(1) - half);
    if (!centers.any().item<bool>()) throw RangeError("ssim: no full window is centered inside the mask");
    auto sel = map.squeeze(1).masked_select(centers.unsqueeze(0).expand({c, centers.size(0), centers.size(1)}));
    return sel.mean().item<double>();
}

MetricStat summarize(const std::vector<double>& values) {
    MetricStat s;
    if (values.empty()) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(var / static_cast<double>(values.size()));
    return s;
}

EvalReport region_eval(const std::vector<ImageTensor>& pred_set, const std::vector<ImageTensor>& gt_set,
                       const std::vector<RegionMasks>& masks, PerceptualMetric& metric, double psnr_cap) {
    if (pred_set.size() != gt_set.size() || pred_set.size() != masks.size()) {
        throw ShapeError("region_eval: " + std::to_string(pred_set.size()) + " predictions, " +
                         std::to_string(gt_set.size()) + " targets, " + std::to_string(masks.size()) + " masks");
    }
    if (pred_set.empty()) throw UserError("region_eval: empty evaluation set");

    struct Acc {
        std::vector<double> p, s, d;
    } acc[3];
    torch::NoGradGuard no_grad;
    for (size_t i = 0; i < pred_set.size(); ++i) {
        const auto& pred = pred_set[i];
        const auto& gt = gt_set[i];
        masks[i].validate();
        const torch::Tensor* regions[3] = {&masks[i].full, &masks[i].upper, &masks[i].lower};
        for (int r = 0; r < 3; ++r) {
            const auto& m = *regions[r];
            if (!m.any().item<bool>()) continue;
            acc[r].p.push_back(psnr(pred, gt, m, psnr_cap));
            acc[r].s.push_back(ssim(pred, gt, m));
            auto mf = m.to(pred.data().scalar_type()).unsqueeze(0);
            auto gt_canon = gt.unit() * 2 - 1;
            auto composite = (pred.unit() * 2 - 1) * mf + gt_canon * (1 - mf);
            acc[r].d.push_back(metric.distance(composite.unsqueeze(0), gt_canon.unsqueeze(0)).mean().item<double>());
        }
    }
    EvalReport report;
    report.sample_count = static_cast<int64_t>(pred_set.size());
    RegionStats* out[3] = {&report.full, &report.upper, &report.lower};
    for (int r = 0; r < 3; ++r) {
        out[r]->psnr = summarize(acc[r].p);
        out[r]->ssim = summarize(acc[r].s);
        out[r]->perceptual = summarize(acc[r].d);
        out[r]->count = static_cast<int64_t>(acc[r].p.size());
    }
    return report;
}

namespace {

nlohmann::json stat_json(const MetricStat& s) { return {{"mean", s.mean}, {"std", s.std}}; }

nlohmann::json region_json(const RegionStats& r) {
    return {{"psnr", stat_json(r.psnr)}, {"ssim", stat_json(r.ssim)}, {"perceptual", stat_json(r.perceptual)},
            {"count", r.count}};
}

std::string pm(const MetricStat& s, int precision) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(precision) << s.mean << " ± " << s.std;
    return o.str();
}

}  // namespace

std::string EvalReport::to_json() const {
    nlohmann::json j{{"schema", "ego2front.eval_report"},
                     {"version", kSchemaVersion},
                     {"label", label},
                     {"config_hash", config_hash},
                     {"sample_count", sample_count},
                     {"regions", {{"full", region_json(full)}, {"upper", region_json(upper)}, {"lower", region_json(lower)}}}};
    return j.dump(2) + "\n";
}

std::string format_eval_table(const std::vector<EvalReport>& rows) {
    std::ostringstream o;
    o << std::left << std::setw(28) << "Method";
    for (const char* region : {"Full Body", "Upper Body", "Lower Body"}) {
        o << " | " << region << ": PSNR, SSIM, Perceptual";
    }
    o << " | Config\n";
    for (const auto& r : rows) {
        o << std::left << std::setw(28) << r.label;
        for (const RegionStats* s : {&r.full, &r.upper, &r.lower}) {
            o << " | " << pm(s->psnr, 2) << ", " << pm(s->ssim, 3) << ", " << pm(s->perceptual, 3);
        }
        o << " | " << r.config_hash.substr(0, 12) << "\n";
    }
    return o.str();
}

std::string ClothingAccuracy::formatted() const { return pct(lower_percent) + "% / " + pct(upper_percent) + "%"; }

ClothingAccuracy clothing_accuracy(const std::vector<ClothingLabels>& predicted, const std::vector<ClothingLabels>& truth) {
    if (predicted.size() != truth.size()) {
        throw ShapeError("clothing_accuracy: " + std::to_string(predicted.size()) + " predictions vs " +
                         std::to_string(truth.size()) + " labels");
    }
    if (predicted.empty()) throw UserError("clothing_accuracy: no samples");
    ClothingAccuracy a;
    a.samples = static_cast<int64_t>(predicted.size());
    for (size_t i = 0; i < predicted.size(); ++i) {
        a.lower_matches += predicted[i].lower == truth[i].lower;
        a.upper_matches += predicted[i].upper == truth[i].upper;
    }
    const auto n = static_cast<double>(a.samples);
    a.lower_percent = static_cast<int>(std::lround(100.0 * static_cast<double>(a.lower_matches) / n));
    a.upper_percent = static_cast<int>(std::lround(100.0 * static_cast<double>(a.upper_matches) / n));
    return a;
}

ClothingAccuracy clothing_accuracy(const std::vector<std::pair<std::string, std::string>>& predicted,
                                   const std::vector<std::pair<std::string, std::string>>& truth) {
    auto convert = [](const std::vector<std::pair<std::string, std::string>>& in) {
        std::vector<ClothingLabels> out;
        out.reserve(in.size());
        for (const auto& [lower, upper] : in) out.push_back({parse_lower(lower), parse_upper(upper)});
        return out;
    };
    return clothing_accuracy(convert(predicted), convert(truth));
}

int64_t RankAggregate::total_points() const {
    int64_t total = 0;
    for (const auto& m : methods) total += m.borda_score;
    return total;
}

const MethodScore& RankAggregate::at(const std::string& method) const {
    for (const auto& m : methods) {
        if (m.method == method) return m;
    }
    throw UserError("no method named '" + method + "' in the aggregate");
}

std::string RankAggregate::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& m : methods) {
        rows.push_back({{"method", m.method}, {"borda_score", m.borda_score}, {"mean_rank", m.mean_rank}});
    }
    nlohmann::json j{{"schema", "ego2front.rank_aggregate"},
                     {"version", kSchemaVersion},
                     {"ballot_count", ballot_count},
                     {"method_count", method_count},
                     {"total_points", total_points()},
                     {"methods", rows}};
    return j.dump(2) + "\n";
}

std::string RankAggregate::to_table() const {
    std::ostringstream o;
    o << std::left << std::setw(20) << "Method" << std::right << std::setw(8) << "BS" << std::setw(8) << "MR" << "\n";
    for (const auto& m : methods) {
        o << std::left << std::setw(20) << m.method << std::right << std::setw(8) << m.borda_score << std::setw(8)
          << std::fixed << std::setprecision(2) << m.mean_rank << "\n";
    }
    o << "ballots: " << ballot_count << ", methods: " << method_count << ", total points: " << total_points() << "\n";
    return o.str();
}

RankAggregate borda_aggregate(const std::vector<Ballot>& ballots) {
    if (ballots.empty()) throw UserError("borda_aggregate: no ballots");
    const auto& first = ballots.front().ranking;
    const std::set<std::string> method_set(first.begin(), first.end());
    const auto k = static_cast<int64_t>(first.size());
    if (k < 2) throw UserError("ballot '" + ballots.front().rater_id + "' ranks fewer than two methods");

    std::map<std::string, int64_t> points, rank_sum;
    for (size_t b = 0; b < ballots.size(); ++b) {
        const auto& ballot = ballots[b];
        const std::string who = "ballot " + std::to_string(b + 1) + " (rater '" + ballot.rater_id + "')";
        std::set<std::string> seen;
        for (const auto& m : ballot.ranking) {
            if (!method_set.count(m)) throw UserError(who + " ranks unknown method '" + m + "'");
            if (!seen.insert(m).second) throw UserError(who + " ranks '" + m + "' more than once (tie)");
        }
        if (static_cast<int64_t>(seen.size()) != k) {
            for (const auto& m : method_set) {
                if (!seen.count(m)) throw UserError(who + " is missing method '" + m + "'");
            }
        }
        for (int64_t r = 0; r < k; ++r) {
            const auto& m = ballot.ranking[static_cast<size_t>(r)];
            points[m] += k - (r + 1);
            rank_sum[m] += r + 1;
        }
    }
    RankAggregate agg;
    agg.ballot_count = static_cast<int64_t>(ballots.size());
    agg.method_count = k;
    for (const auto& m : first) {
        agg.methods.push_back({m, points[m], static_cast<double>(rank_sum[m]) / static_cast<double>(agg.ballot_count)});
    }
    std::stable_sort(agg.methods.begin(), agg.methods.end(),
                     [](const MethodScore& a, const MethodScore& b) { return a.borda_score > b.borda_score; });
    return agg;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<Ballot> parse_ballots(const std::string& text) {
    std::vector<Ballot> out;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::vector<std::string> fields;
        std::istringstream ls(t);
        std::string f;
        while (std::getline(ls, f, ',')) fields.push_back(trim(f));
        if (fields.size() < 3) {
            throw UserError("ballot line " + std::to_string(line_no) + ": expected rater_id and at least two methods");
        }
        for (const auto& field : fields) {
            if (field.empty()) throw UserError("ballot line " + std::to_string(line_no) + ": empty field");
        }
        out.push_back({fields[0], {fields.begin() + 1, fields.end()}});
    }
    return out;
}

std::vector<Ballot> read_ballots(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UserError("cannot read ballots file '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_ballots(ss.str());
}

}  // namespace ego2front
