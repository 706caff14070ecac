#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "mtl/data.hpp"

namespace mtl {

void SynthConfig::validate() const {
  if (videos == 0) throw ConfigError("synth: video count must be positive");
  if (frames_min == 0 || frames_max < frames_min)
    throw ConfigError("synth: invalid frame range");
  if (feature_dims.empty()) throw ConfigError("synth: need at least one feature set");
  for (std::size_t d : feature_dims)
    if (d == 0) throw ConfigError("synth: feature dims must be positive");
  if (latent_dim < 3) throw ConfigError("synth: latent dim must be >= 3");
  for (double m : {missing_v, missing_a, missing_expr, missing_au})
    if (m < 0.0 || m >= 1.0) throw ConfigError("synth: missing rates must be in [0,1)");
  if (feature_noise < 0.0) throw ConfigError("synth: feature noise must be >= 0");
}

namespace {

// Smooth bounded trajectory: three sinusoids with |amplitudes| summing to 1,
// so the value stays inside [-1, 1].
struct Trajectory {
  std::array<double, 3> amplitude{}, cycles_per_100{}, phase{};

  static Trajectory draw(Rng& rng) {
    Trajectory t;
    double total = 0.0;
    for (double& a : t.amplitude) {
      a = rng.uniform(0.2, 1.0);
      total += a;
    }
    for (double& a : t.amplitude) a /= total;
    for (double& f : t.cycles_per_100) f = rng.uniform(0.5, 3.0);
    for (double& p : t.phase) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
    return t;
  }

  double at(std::size_t frame) const {
    double v = 0.0;
    for (std::size_t j = 0; j < 3; ++j)
      v += amplitude[j] * std::sin(2.0 * std::numbers::pi * cycles_per_100[j] *
                                       static_cast<double>(frame) / 100.0 +
                                   phase[j]);
    return v;
  }
};

int expression_from(double z0, double z1) {
  const double angle = std::atan2(z1, z0);  // (-pi, pi]
  int sector = static_cast<int>((angle + std::numbers::pi) / (std::numbers::pi / 4.0));
  return std::clamp(sector, 0, static_cast<int>(kExpressionClasses) - 1);
}

}  // namespace

std::filesystem::path synth_generate(const SynthConfig& config,
                                     const std::filesystem::path& out_dir) {
  config.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "labels");
  for (std::size_t si = 0; si < config.feature_dims.size(); ++si)
    fs::create_directories(out_dir / "features" / ("f" + std::to_string(si)));

  Rng dataset_rng(config.seed);
  const std::size_t latents = config.latent_dim;

  // Dataset-level readouts: feature mixing matrices and AU thresholds. The
  // AU readouts lean on the same latents that drive V/A/EXPR so the tasks
  // genuinely share structure.
  std::vector<std::vector<double>> mixers;  // per set: latents x dim
  for (std::size_t d : config.feature_dims) {
    std::vector<double> m(latents * d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(latents));
    for (double& v : m) v = dataset_rng.normal(0.0, scale);
    mixers.push_back(std::move(m));
  }
  std::array<std::array<double, 3>, kActionUnits> au_readout{};
  std::array<double, kActionUnits> au_threshold{};
  for (std::size_t j = 0; j < kActionUnits; ++j) {
    double norm = 0.0;
    for (double& w : au_readout[j]) {
      w = dataset_rng.normal();
      norm += w * w;
    }
    norm = std::sqrt(norm);
    for (double& w : au_readout[j]) w /= norm;
    au_threshold[j] = dataset_rng.uniform(-0.2, 0.2);
  }

  std::ofstream manifest(out_dir / "manifest.tsv");
  if (!manifest)
    throw DataError("cannot open manifest for writing in " + out_dir.string());
  manifest << "#mtl-manifest\tv1\n";
  for (std::size_t si = 0; si < config.feature_dims.size(); ++si)
    manifest << "#feature-set\tf" << si << '\t' << config.feature_dims[si] << '\n';

  for (std::size_t vi = 0; vi < config.videos; ++vi) {
    char id_buf[16];
    std::snprintf(id_buf, sizeof(id_buf), "v%04zu", vi);
    const std::string video_id = id_buf;
    Rng rng(derive_seed(config.seed, vi));

    const std::size_t frames =
        config.frames_min +
        (config.frames_max > config.frames_min
             ? rng.index(config.frames_max - config.frames_min + 1)
             : 0);

    std::vector<Trajectory> traj;
    traj.reserve(latents);
    for (std::size_t k = 0; k < latents; ++k) traj.push_back(Trajectory::draw(rng));

    std::vector<double> z(frames * latents);
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t k = 0; k < latents; ++k) z[t * latents + k] = traj[k].at(t);

    // Labels, then per-frame missingness.
    std::vector<std::int64_t> frame_ids(frames);
    LabelBatch labels;
    labels.resize(frames);
    for (std::size_t t = 0; t < frames; ++t) {
      frame_ids[t] = static_cast<std::int64_t>(t);
      const double z0 = z[t * latents + 0];
      const double z1 = z[t * latents + 1];
      const double z2 = z[t * latents + 2];
      labels.valence[t] = z0;
      labels.valence_mask[t] = !rng.bernoulli(config.missing_v);
      labels.arousal[t] = z1;
      labels.arousal_mask[t] = !rng.bernoulli(config.missing_a);
      labels.expression[t] = expression_from(z0, z1);
      labels.expression_mask[t] = !rng.bernoulli(config.missing_expr);
      for (std::size_t j = 0; j < kActionUnits; ++j) {
        const double score = au_readout[j][0] * z0 + au_readout[j][1] * z1 +
                             au_readout[j][2] * z2;
        labels.au[t][j] = score > au_threshold[j] ? 1 : 0;
        labels.au_mask[t][j] = !rng.bernoulli(config.missing_au);
      }
    }
    write_label_file(out_dir / "labels" / (video_id + ".tsv"), frame_ids, labels);

    manifest << video_id << '\t' << frames << '\t' << "labels/" << video_id << ".tsv";
    for (std::size_t si = 0; si < config.feature_dims.size(); ++si) {
      const std::size_t dim = config.feature_dims[si];
      std::vector<float> data(frames * dim);
      for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t c = 0; c < dim; ++c) {
          double v = 0.0;
          for (std::size_t k = 0; k < latents; ++k)
            v += z[t * latents + k] * mixers[si][k * dim + c];
          v += rng.normal(0.0, config.feature_noise);
          data[t * dim + c] = static_cast<float>(v);
        }
      const std::string rel =
          "features/f" + std::to_string(si) + "/" + video_id + ".mtlf";
      write_feature_file(out_dir / rel, frames, dim, data);
      manifest << '\t' << rel;
    }
    manifest << '\n';
  }
  if (!manifest) throw DataError("failed writing manifest in " + out_dir.string());
  return out_dir / "manifest.tsv";
}

}  // namespace mtl
