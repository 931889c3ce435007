#pragma once

// Batch driver behind the command-line tool: loads bundles, runs the selected
// analyses and writes one CSV per analysis (plus SVG figures on request).

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "iavkit/attribution.hpp"
#include "iavkit/bundle.hpp"
#include "iavkit/error.hpp"
#include "iavkit/metrics.hpp"
#include "iavkit/npy.hpp"
#include "iavkit/perturbation.hpp"
#include "iavkit/random.hpp"
#include "iavkit/svg.hpp"
#include "iavkit/tsne.hpp"
#include "iavkit/vit.hpp"

namespace iavkit {

// ---------------------------------------------------------------------------
// Synthetic bundles

struct SynthOptions {
  ViTConfig model;
  std::size_t n_samples = 64;
  std::uint64_t seed = 0;
  double occlusion_baseline = 0.5;  // mean of the uniform [0, 1) images; 0 leaves most maps all-zero
  std::string checkpoint_tag = "synthetic";
};

/// Seeded images through a seeded toy ViT. Attribution is occlusion for the
/// predicted class (plus every class in class_attribution).
///
/// Images and labels depend only on `seed`: labels are the predictions of the
/// toy ViT initialized from `seed`, with every fourth sample moved to another
/// class. Bundles that differ only in `model.rng_seed` therefore form a
/// checkpoint pair over the same samples.
inline AnalysisBundle make_synthetic_bundle(const SynthOptions& options) {
  const ViTConfig& cfg = options.model;
  cfg.validate();
  if (options.n_samples == 0) fail(ErrorKind::InvalidConfig, "n_samples must be positive");
  const ViTModel model = init_model(cfg);
  const Scorer scorer = make_scorer(model);
  std::optional<ViTModel> reference;
  if (cfg.rng_seed != options.seed) {
    ViTConfig ref_cfg = cfg;
    ref_cfg.rng_seed = options.seed;
    reference = init_model(ref_cfg);
  }
  const std::size_t n = options.n_samples, p = cfg.n_patches(), k = cfg.n_classes;

  AnalysisBundle b;
  b.dims = {n, cfg.n_layers, cfg.n_heads, p, k, cfg.patch_size, cfg.image_shape()};
  b.attention = Tensor({n, cfg.n_layers, cfg.n_heads, p});
  b.attribution = Tensor({n, p});
  b.class_attribution = Tensor({n, k, p});
  b.images = Tensor({n, cfg.image_rows, cfg.image_cols, cfg.channels});
  b.attribution_method = "occlusion";
  b.attribution_target = LabelMode::Predicted;
  b.checkpoint_tag = options.checkpoint_tag;
  for (std::size_t c = 0; c < k; ++c) b.class_names.push_back("class_" + std::to_string(c));

  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(stream_seed(options.seed, i));
    Tensor image(cfg.image_shape());
    for (double& v : image.values()) v = uniform01(rng);
    std::copy(image.values().begin(), image.values().end(), b.images->slice({i}).begin());

    const ForwardResult out = forward(model, image);
    const auto prediction = static_cast<std::int64_t>(argmax(out.scores.values()));
    std::int64_t label = prediction;
    if (reference) {
      const ForwardResult ref = forward(*reference, image);
      label = static_cast<std::int64_t>(argmax(ref.scores.values()));
    }
    if (i % 4 == 3 && k > 1) {
      label = static_cast<std::int64_t>((static_cast<std::uint64_t>(label) + 1 + uniform_index(rng, k - 1)) % k);
    }
    b.predictions.push_back(prediction);
    b.labels.push_back(label);

    const Tensor cls = extract_cls_attention(out.attention);
    std::copy(cls.values().begin(), cls.values().end(), b.attention.slice({i}).begin());

    const Tensor drops = occlusion_drops(scorer, image, cfg.patch_size, options.occlusion_baseline);
    std::copy(drops.values().begin(), drops.values().end(), b.class_attribution->slice({i}).begin());
    auto own = drops.slice({static_cast<std::size_t>(prediction)});
    std::copy(own.begin(), own.end(), b.attribution.slice({i}).begin());
  }
  validate_bundle(b);
  return b;
}

/// Writes the bundle plus its generating model under `dir/model`.
inline AnalysisBundle write_synthetic_bundle(const SynthOptions& options, const std::filesystem::path& dir) {
  AnalysisBundle b = make_synthetic_bundle(options);
  b.model_dir = "model";
  save_bundle(b, dir);
  save_model(init_model(options.model), dir / b.model_dir);
  return b;
}

// ---------------------------------------------------------------------------
// Report

enum class Analysis { Iav, GlobalIav, Aav, Entropy, Heads, MaskCurve, Perturb, Embed, Diff };

inline std::string to_string(Analysis a) {
  switch (a) {
    case Analysis::Iav: return "iav";
    case Analysis::GlobalIav: return "global-iav";
    case Analysis::Aav: return "aav";
    case Analysis::Entropy: return "entropy";
    case Analysis::Heads: return "heads";
    case Analysis::MaskCurve: return "mask-curve";
    case Analysis::Perturb: return "perturb";
    case Analysis::Embed: return "embed";
    case Analysis::Diff: return "diff";
  }
  return "unknown";
}

inline const std::vector<Analysis>& all_analyses() {
  static const std::vector<Analysis> all{Analysis::Iav,       Analysis::GlobalIav, Analysis::Aav,
                                         Analysis::Entropy,   Analysis::Heads,     Analysis::MaskCurve,
                                         Analysis::Perturb,   Analysis::Embed,     Analysis::Diff};
  return all;
}

struct JigsawSetting {
  std::size_t grid_size = 2;
  std::vector<std::size_t> swaps;
};

struct ReportSpec {
  std::vector<std::filesystem::path> bundles;
  std::set<Analysis> analyses;
  std::filesystem::path out_dir = "report";
  bool figures = false;
  bool sort_heads = false;
  // Analyses that need optional inputs (baseline, final bundle, images) are
  // skipped instead of failing when this is set; used by `report`.
  bool skip_unavailable = false;
  std::uint64_t seed = 0;
  LabelMode labels = LabelMode::Predicted;
  LabelMode embed_labels = LabelMode::GroundTruth;
  std::filesystem::path baseline;       // AAV baseline NPY
  std::filesystem::path final_bundle;   // checkpoint diff reference
  std::filesystem::path model_dir;      // scorer override
  std::vector<double> ratios{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<std::string> sources{"attention-mean", "attribution", "random"};
  double fill = 0.0;
  std::vector<double> blur_sigmas{0.0, 0.5, 1.0, 2.0};
  std::vector<JigsawSetting> jigsaw{{2, {0, 1, 2, 3}}};
  std::optional<std::size_t> embed_layer;  // 0-based; all layers when unset
  TsneConfig tsne;
};

struct RunResult {
  int exit_code = 0;
  std::vector<std::filesystem::path> files;
  std::vector<std::string> skipped;
};

namespace detail {

class ReportWriter {
 public:
  ReportWriter(std::filesystem::path dir, RunResult& result) : dir_(std::move(dir)), result_(result) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec || !std::filesystem::is_directory(dir_)) fail(ErrorKind::IoFailure, "cannot create " + dir_.string());
  }

  void write(const std::string& name, const std::string& text) {
    npy::write_file_atomic(dir_ / name, text);
    result_.files.push_back(dir_ / name);
  }

 private:
  std::filesystem::path dir_;
  RunResult& result_;
};

struct Unavailable {
  std::string reason;
};

class BundleRun {
 public:
  BundleRun(const ReportSpec& spec, const std::filesystem::path& path, ReportWriter& out)
      : spec_(spec), path_(path), out_(out), bundle_(load_bundle(path)) {}

  void run(Analysis a) {
    switch (a) {
      case Analysis::Iav: return iav_table();
      case Analysis::GlobalIav: return global_iav_table();
      case Analysis::Aav: return aav_table();
      case Analysis::Entropy: return entropy_table();
      case Analysis::Heads: return heads_table();
      case Analysis::MaskCurve: return mask_curve_table();
      case Analysis::Perturb: return perturb_table();
      case Analysis::Embed: return embed_table();
      case Analysis::Diff: return diff_table();
    }
  }

 private:
  std::vector<std::string> head_labels() const {
    std::vector<std::string> labels;
    for (std::size_t l = 0; l < bundle_.dims.n_layers; ++l) {
      for (std::size_t h = 0; h < bundle_.dims.n_heads; ++h) {
        labels.push_back(std::to_string(l + 1) + "." + std::to_string(h + 1));
      }
    }
    return labels;
  }

  void iav_table() { out_.write("iav.csv", iav_csv(all_iavs(bundle_, spec_.labels))); }

  void global_iav_table() {
    const GlobalIav g = global_iav(bundle_, spec_.labels);
    out_.write("global_iav.csv", global_iav_csv(g));
    if (spec_.figures) {
      out_.write("global_iav.svg", svg::heatmap(g.scores.storage(), g.n_layers, g.n_heads,
                                                "global-IAV (" + to_string(g.label_mode) + ")", spec_.sort_heads));
    }
  }

  void aav_table() {
    if (spec_.baseline.empty()) throw Unavailable{"no --baseline given"};
    const Tensor t = npy::load_tensor(spec_.baseline);
    const AavBaseline baseline = baseline_from_tensor(t, bundle_, spec_.baseline.stem().string());
    const GlobalIav g = aav(bundle_, baseline, spec_.labels);
    out_.write("aav.csv", global_iav_csv(g));
    if (spec_.figures) {
      out_.write("aav.svg", svg::heatmap(g.scores.storage(), g.n_layers, g.n_heads, "AAV (" + g.baseline_tag + ")",
                                         spec_.sort_heads));
    }
  }

  void entropy_table() {
    const EntropyProfile e = entropy_profile(bundle_);
    out_.write("entropy.csv", entropy_csv(e));
    if (spec_.figures) {
      out_.write("entropy.svg", svg::boxplot(e.heads, head_labels(), "attention entropy per head", "entropy (nats)"));
    }
  }

  void heads_table() {
    const auto profiles = classify_heads(bundle_, spec_.labels);
    out_.write("heads.csv", heads_csv(profiles));
    out_.write("heads.json", heads_json(profiles).dump(2) + "\n");
    if (spec_.figures) {
      std::vector<Summary> boxes;
      for (const auto& p : profiles) boxes.push_back(p.ia);
      out_.write("heads.svg", svg::boxplot(boxes, head_labels(), "IA-Score per head", "IA-Score"));
    }
  }

  const Scorer& scorer() {
    if (!scorer_) {
      std::filesystem::path dir = spec_.model_dir;
      if (dir.empty() && !bundle_.model_dir.empty()) dir = path_ / bundle_.model_dir;
      if (dir.empty()) throw Unavailable{"bundle has no model and no --model was given"};
      model_ = load_model(dir);
      scorer_ = make_scorer(*model_);
    }
    return *scorer_;
  }

  void require_images() const {
    if (!bundle_.images) {
      if (spec_.skip_unavailable) throw Unavailable{"bundle carries no images"};
      fail(ErrorKind::MissingImages, "bundle carries no images");
    }
  }

  void mask_curve_table() {
    require_images();
    const Scorer& s = scorer();
    std::vector<std::pair<std::string, std::vector<CurvePoint>>> series;
    for (const auto& name : spec_.sources) {
      const SaliencySource source = parse_saliency_source(name, spec_.seed);
      series.emplace_back(source.name(), masking_curve(bundle_, s, source, spec_.ratios, spec_.fill));
    }
    out_.write("mask_curve.csv", curve_csv("ratio", series));
    if (spec_.figures) out_.write("mask_curve.svg", svg::line_chart(to_series(series), "masking curve", "masking ratio", "accuracy"));
  }

  void perturb_table() {
    require_images();
    const Scorer& s = scorer();
    std::vector<std::pair<std::string, std::vector<CurvePoint>>> blur, jig;
    if (!spec_.blur_sigmas.empty()) blur.emplace_back("blur", blur_curve(bundle_, s, spec_.blur_sigmas));
    for (const auto& j : spec_.jigsaw) {
      jig.emplace_back("jigsaw-g" + std::to_string(j.grid_size), jigsaw_curve(bundle_, s, j.grid_size, j.swaps, spec_.seed));
    }
    auto all = blur;
    all.insert(all.end(), jig.begin(), jig.end());
    out_.write("perturb.csv", curve_csv("level", all));
    if (spec_.figures) {
      if (!blur.empty()) out_.write("perturb_blur.svg", svg::line_chart(to_series(blur), "Gaussian blur", "sigma", "accuracy"));
      if (!jig.empty()) out_.write("perturb_jigsaw.svg", svg::line_chart(to_series(jig), "jigsaw", "swaps", "accuracy"));
    }
  }

  void embed_table() {
    const auto iavs = all_iavs(bundle_, spec_.embed_labels);
    std::vector<std::size_t> layers;
    if (spec_.embed_layer) {
      if (*spec_.embed_layer >= bundle_.dims.n_layers) {
        fail(ErrorKind::IndexOutOfRange, "layer " + std::to_string(*spec_.embed_layer + 1) + " of " +
                                             std::to_string(bundle_.dims.n_layers));
      }
      layers.push_back(*spec_.embed_layer);
    } else {
      for (std::size_t l = 0; l < bundle_.dims.n_layers; ++l) layers.push_back(l);
    }
    std::vector<EmbeddingRow> rows;
    std::vector<std::string> figures;
    for (std::size_t l : layers) {
      TsneConfig cfg = spec_.tsne;
      cfg.seed = spec_.seed;
      const Tensor y = tsne(layer_slice(iavs, l), cfg);
      std::vector<double> xs, ys;
      for (std::size_t i = 0; i < bundle_.n_samples(); ++i) {
        rows.push_back({i, bundle_.labels[i], bundle_.predictions[i], l, y[2 * i], y[2 * i + 1]});
        xs.push_back(y[2 * i]);
        ys.push_back(y[2 * i + 1]);
      }
      if (spec_.figures) {
        out_.write("embed_layer" + std::to_string(l + 1) + ".svg",
                   svg::scatter(xs, ys, bundle_.labels, "t-SNE of layer " + std::to_string(l + 1) + " IAV"));
      }
    }
    out_.write("embed.csv", embedding_csv(rows));
  }

  void diff_table() {
    if (spec_.final_bundle.empty()) throw Unavailable{"no --final given"};
    const AnalysisBundle final_model = load_bundle(spec_.final_bundle);
    std::ostringstream csv;
    csv << "checkpoint,target,difference\n";
    csv << bundle_.checkpoint_tag << ",attribution,"
        << format_double(checkpoint_diff(bundle_, final_model, DiffTarget::Attribution)) << '\n';
    csv << bundle_.checkpoint_tag << ",attention,"
        << format_double(checkpoint_diff(bundle_, final_model, DiffTarget::Attention)) << '\n';
    out_.write("diff.csv", csv.str());
  }

  static std::vector<svg::Series> to_series(const std::vector<std::pair<std::string, std::vector<CurvePoint>>>& in) {
    std::vector<svg::Series> out;
    for (const auto& [name, points] : in) {
      svg::Series s{name, {}};
      for (const auto& p : points) s.points.emplace_back(p.level, p.accuracy);
      out.push_back(std::move(s));
    }
    return out;
  }

  const ReportSpec& spec_;
  std::filesystem::path path_;
  ReportWriter& out_;
  AnalysisBundle bundle_;
  std::optional<ViTModel> model_;
  std::optional<Scorer> scorer_;
};

}  // namespace detail

/// Runs every selected analysis on every bundle. Returns exit code 0 on
/// success; on the first failure writes a diagnostic naming the bundle and
/// analysis to `log` and returns 1.
inline RunResult run(const ReportSpec& spec, std::ostream& log) {
  RunResult result;
  if (spec.analyses.empty()) {
    log << "iavkit: no analysis selected\n";
    result.exit_code = 1;
    return result;
  }
  if (spec.bundles.empty()) {
    log << "iavkit: no bundle given\n";
    result.exit_code = 1;
    return result;
  }
  for (std::size_t b = 0; b < spec.bundles.size(); ++b) {
    const auto& path = spec.bundles[b];
    std::filesystem::path dir = spec.out_dir;
    if (spec.bundles.size() > 1) dir /= std::to_string(b) + "_" + path.filename().string();
    std::string stage = "load";
    try {
      detail::ReportWriter writer(dir, result);
      detail::BundleRun bundle_run(spec, path, writer);
      for (Analysis a : all_analyses()) {
        if (!spec.analyses.count(a)) continue;
        stage = to_string(a);
        try {
          bundle_run.run(a);
        } catch (const detail::Unavailable& u) {
          if (!spec.skip_unavailable) fail(ErrorKind::InvalidArgument, u.reason);
          result.skipped.push_back(stage + ": " + u.reason);
          log << "iavkit: skipped " << stage << " for " << path.string() << " (" << u.reason << ")\n";
        }
      }
    } catch (const std::exception& e) {
      log << "iavkit: bundle '" << path.string() << "' analysis '" << stage << "': " << e.what() << '\n';
      result.exit_code = 1;
      return result;
    }
  }
  return result;
}

}  // namespace iavkit
