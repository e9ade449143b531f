#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "psmmlab/augment.hpp"
#include "psmmlab/dataset.hpp"
#include "psmmlab/psmm.hpp"
#include "psmmlab/rankpool.hpp"

namespace psmmlab::dataset {

// All modality streams of one capture (<eth>_<subject>/<pai>_<k>).
struct SampleGroup {
  std::string dir;
  int label = 0;
  int subject = 0;
  Pai pai = Pai::real;
  std::map<Modality, ManifestRow> rows;
  std::size_t frame_count = 0;  // shortest stream
};

// Groups manifest rows by capture, keeping those that carry every modality
// in `modalities`. Order follows first appearance in the manifest.
inline std::vector<SampleGroup> group_samples(const Manifest& m, std::span<const Modality> modalities) {
  std::vector<SampleGroup> groups;
  std::map<std::string, std::size_t> index;
  for (const ManifestRow& r : m) {
    const std::string dir = r.sample_dir();
    auto [it, fresh] = index.try_emplace(dir, groups.size());
    if (fresh) groups.push_back({dir, r.label, r.subject, r.pai, {}, 0});
    groups[it->second].rows[r.modality] = r;
  }
  std::vector<SampleGroup> out;
  for (SampleGroup& g : groups) {
    if (!std::all_of(modalities.begin(), modalities.end(), [&](Modality md) { return g.rows.contains(md); })) continue;
    g.frame_count = SIZE_MAX;
    for (Modality md : modalities) g.frame_count = std::min(g.frame_count, g.rows.at(md).frame_count);
    out.push_back(std::move(g));
  }
  return out;
}

struct LoaderOptions {
  std::size_t k = 7;  // dynamic-image window length
  std::size_t side = 32;
  bool augment = false;
  augment::Options augment_options = augment::options_for_side(32);
  rankpool::SolverOptions solver{};
};

struct Batch {
  Inputs inputs;
  std::vector<double> labels;
  std::vector<std::size_t> samples;  // indices into the loader's sample list
  std::vector<std::size_t> frames;   // frame index used per sample
};

// Reads frames lazily and caches decoded clips and dynamic images.
class BatchLoader {
 public:
  BatchLoader(std::filesystem::path root, const Manifest& manifest, std::vector<Modality> modalities,
              LoaderOptions opt)
      : root_(std::move(root)), modalities_(canonical_modalities(modalities)), opt_(std::move(opt)) {
    require(!manifest.empty(), "empty manifest");
    for (const auto& r : manifest)
      if (r.frame_count < 2) throw InputError("clip shorter than 2 frames: " + r.path);
    samples_ = group_samples(manifest, modalities_);
    require(!samples_.empty(), "no sample in the manifest provides modalities " + join_modalities(modalities_));
    opt_.augment_options.side = opt_.side;
  }

  std::size_t size() const noexcept { return samples_.size(); }
  const std::vector<SampleGroup>& samples() const noexcept { return samples_; }
  const std::vector<Modality>& modalities() const noexcept { return modalities_; }
  const LoaderOptions& options() const noexcept { return opt_; }

  // Batch for the given samples; frame per sample drawn from `seed`.
  Batch load(std::span<const std::size_t> indices, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> frames;
    for (std::size_t i : indices) {
      require(i < samples_.size(), "sample index out of range");
      frames.push_back(std::uniform_int_distribution<std::size_t>(0, samples_[i].frame_count - 1)(rng));
    }
    return load_at(indices, frames, seed);
  }

  // `batch_size` distinct samples (with repeats only when the set is
  // smaller) drawn from `seed`.
  Batch load_batch(std::size_t batch_size, std::uint64_t seed) {
    require(batch_size >= 1, "batch size must be positive");
    std::mt19937_64 rng(split_seed(seed, 0));
    std::vector<std::size_t> order(samples_.size());
    std::vector<std::size_t> picked;
    while (picked.size() < batch_size) {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t i = 0; i < order.size() && picked.size() < batch_size; ++i) picked.push_back(order[i]);
    }
    return load(picked, split_seed(seed, 1));
  }

  Batch load_at(std::span<const std::size_t> indices, std::span<const std::size_t> frames, std::uint64_t seed) {
    require(indices.size() == frames.size() && !indices.empty(), "load_at: need one frame index per sample");
    const std::size_t b = indices.size(), s = opt_.side;
    Batch batch;
    for (Modality m : modalities_) batch.inputs[m] = {Tensor({b, 3, s, s}), Tensor({b, 3, s, s})};
    for (std::size_t n = 0; n < b; ++n) {
      const SampleGroup& g = samples_.at(indices[n]);
      require(frames[n] < g.frame_count, "frame index out of range for " + g.dir);
      const augment::Params ap = opt_.augment ? augment::sample_params(opt_.augment_options, split_seed(seed, 100 + n))
                                              : augment::Params::identity(opt_.augment_options);
      for (Modality m : modalities_) {
        const ManifestRow& row = g.rows.at(m);
        const Image& still = clip(row).frames[frames[n]];
        const Image& dyn = dynamic(row, frames[n]);
        pack_nchw(prepare(still, ap), batch.inputs[m].static_img, n);
        pack_nchw(prepare(dyn, ap), batch.inputs[m].dynamic_img, n);
      }
      batch.labels.push_back(static_cast<double>(g.label));
    }
    batch.samples.assign(indices.begin(), indices.end());
    batch.frames.assign(frames.begin(), frames.end());
    return batch;
  }

  const Clip& clip(const ManifestRow& row) {
    auto it = clips_.find(row.path);
    if (it == clips_.end()) {
      ClipRecord rec;
      rec.path = row.path;
      rec.frame_count = row.frame_count;
      Clip c = load_clip(root_, rec);
      for (Image& f : c.frames) f = to_rgb(f);
      it = clips_.emplace(row.path, std::move(c)).first;
    }
    return it->second;
  }

  // Normalized K-window dynamic image starting at `frame`, before resizing.
  const Image& dynamic(const ManifestRow& row, std::size_t frame) {
    const auto key = std::make_pair(row.path, frame);
    auto it = dynamic_.find(key);
    if (it == dynamic_.end()) it = dynamic_.emplace(key, rankpool::dynamic_image(clip(row), opt_.k, frame, opt_.solver)).first;
    return it->second;
  }

 private:
  static Image to_rgb(const Image& img) {
    if (img.channels == 3) return img;
    Image out(img.height, img.width, 3);
    for (std::size_t i = 0; i < img.height * img.width; ++i)
      for (std::size_t c = 0; c < 3; ++c) out.pixels[i * 3 + c] = img.pixels[i * img.channels];
    return out;
  }

  Image prepare(const Image& img, const augment::Params& ap) const {
    if (!opt_.augment) return resize(img, opt_.side, opt_.side);
    return augment::apply(img, ap, opt_.augment_options);
  }

  std::filesystem::path root_;
  std::vector<Modality> modalities_;
  LoaderOptions opt_;
  std::vector<SampleGroup> samples_;
  std::map<std::string, Clip> clips_;
  std::map<std::pair<std::string, std::size_t>, Image> dynamic_;
};

}  // namespace psmmlab::dataset
