#include "structnerf/losses.hpp"

#include <sstream>
#include <stdexcept>

namespace structnerf {

void LossWeights::validate() const {
  if (lambda_ph < 0.0 || lambda_pc < 0.0 || lambda_sparse < 0.0)
    throw std::invalid_argument("loss weights must be non-negative");
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha must lie in [0, 1]");
  if (warmup_fraction < 0.0 || warmup_fraction > 1.0) throw std::invalid_argument("warmup_fraction must lie in [0, 1]");
}

AblationFlags AblationFlags::color_only() {
  AblationFlags f;
  f.no_patch = true;
  f.no_sparse = true;
  f.no_patchmatch = true;
  f.no_plane_reg = true;
  return f;
}

std::string AblationFlags::to_string() const {
  const bool values[] = {no_dense_sampling, no_patch, no_warmup, no_sparse, no_patchmatch, no_plane_reg};
  std::string out;
  for (std::size_t i = 0; i < kAblationNames.size(); ++i) {
    if (!values[i]) continue;
    if (!out.empty()) out += ',';
    out += kAblationNames[i];
  }
  return out;
}

AblationFlags AblationFlags::parse(const std::string& text) {
  AblationFlags f;
  bool* fields[] = {&f.no_dense_sampling, &f.no_patch, &f.no_warmup, &f.no_sparse, &f.no_patchmatch, &f.no_plane_reg};
  std::stringstream in(text);
  std::string name;
  while (std::getline(in, name, ',')) {
    const auto b = name.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    name = name.substr(b, name.find_last_not_of(" \t") - b + 1);
    if (name == "none") continue;
    if (name == "color_only") {
      f = color_only();
      continue;
    }
    bool found = false;
    for (std::size_t i = 0; i < kAblationNames.size(); ++i) {
      if (name == kAblationNames[i]) {
        *fields[i] = true;
        found = true;
      }
    }
    if (!found) throw std::invalid_argument("unknown ablation flag '" + name + "'");
  }
  return f;
}

double lambda_sparse_at(long iter, long total_iters, const LossWeights& weights, bool no_warmup) {
  if (iter < 0 || total_iters <= 0) throw std::invalid_argument("lambda_sparse_at: bad iteration range");
  if (no_warmup) return weights.lambda_sparse;
  return static_cast<double>(iter) < weights.warmup_fraction * static_cast<double>(total_iters) ? weights.lambda_sparse
                                                                                                 : 0.0;
}

EffectiveWeights effective_weights(long iter, long total_iters, const LossWeights& weights, const AblationFlags& flags) {
  EffectiveWeights w;
  w.ph = flags.no_patchmatch ? 0.0 : weights.lambda_ph;
  w.pc = flags.no_plane_reg ? 0.0 : weights.lambda_pc;
  w.sparse = flags.no_sparse ? 0.0 : lambda_sparse_at(iter, total_iters, weights, flags.no_warmup);
  return w;
}

std::optional<PatchColors<double>> target_patch(const Image& target, const Pixel& center, double spacing) {
  const std::array<Pixel, 9> offsets = support_domain(center, spacing);
  PatchColors<double> out;
  for (int i = 0; i < 9; ++i)
    if (!bilinear_at(target, offsets[i].u, offsets[i].v, out[i].data())) return std::nullopt;
  return out;
}

}  // namespace structnerf
