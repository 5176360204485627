#include "ego2front/dataset.hpp"

#include "ego2front/error.hpp"
#include "ego2front/image_io.hpp"
#include "ego2front/tensor.hpp"

namespace ego2front {

void TrainingSet::validate() const {
    const auto m = size();
    if (m == 0) throw UserError("training set is empty");
    if (!masks.defined() || masks.size(0) != m || static_cast<int64_t>(ego.size()) != m ||
        static_cast<int64_t>(ids.size()) != m) {
        throw ShapeError("training set fields are not aligned");
    }
    for (int64_t i = 0; i < m; ++i) {
        const auto& e = ego[static_cast<size_t>(i)];
        if (e.dim() != 4 || e.size(0) == 0 || !e.sizes().slice(1).equals(frontal.sizes().slice(1))) {
            throw ShapeError("entry " + ids[static_cast<size_t>(i)] + ": ego frames " + shape_string(e) +
                             " do not match the frontal resolution");
        }
    }
}

torch::Tensor TrainingSet::all_images() const {
    std::vector<torch::Tensor> parts{frontal};
    parts.insert(parts.end(), ego.begin(), ego.end());
    return torch::cat(parts, 0);
}

TrainingSet TrainingSet::subset(const std::vector<int64_t>& indices) const {
    TrainingSet out;
    auto idx = torch::tensor(indices, torch::kLong);
    out.frontal = frontal.index_select(0, idx);
    out.masks = masks.index_select(0, idx);
    for (auto i : indices) {
        out.ego.push_back(ego.at(static_cast<size_t>(i)));
        out.ids.push_back(ids.at(static_cast<size_t>(i)));
        out.clothing.push_back(clothing.empty() ? std::nullopt : clothing.at(static_cast<size_t>(i)));
    }
    return out;
}

TrainingSet load_training_set(const DatasetManifest& manifest, const std::filesystem::path& base_dir,
                              const std::string& split) {
    std::vector<torch::Tensor> frontal, masks;
    TrainingSet set;
    for (const auto& e : manifest.entries) {
        if (!split.empty() && e.split != split) continue;
        if (e.pose_mask_path.empty()) throw UserError("manifest entry '" + e.frontal_id + "' has no pose mask");
        frontal.push_back(read_rgb(base_dir / e.frontal_path));
        masks.push_back(read_mask(base_dir / e.pose_mask_path));
        std::vector<torch::Tensor> ego;
        for (const auto& p : e.ego_paths) ego.push_back(read_rgb(base_dir / p));
        if (ego.empty()) throw UserError("manifest entry '" + e.frontal_id + "' has no ego frames");
        set.ego.push_back(torch::stack(ego));
        set.ids.push_back(e.frontal_id);
        set.clothing.push_back(e.clothing);
    }
    if (frontal.empty()) throw UserError("split '" + split + "' of the manifest is empty");
    set.frontal = torch::stack(frontal);
    set.masks = torch::stack(masks);
    set.validate();
    return set;
}

}  // namespace ego2front
