// iavkit: attention / input-attribution agreement analyses on bundle directories.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "iavkit/iavkit.hpp"

namespace {

struct CommonOptions {
  std::vector<std::string> bundles;
  std::string out = "report";
  std::uint64_t seed = 0;
  std::string labels = "predicted";
  bool figures = false;
  bool sort_heads = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--bundle", o.bundles, "Bundle directory (repeatable)")->required();
  cmd->add_option("--out", o.out, "Output directory")->capture_default_str();
  cmd->add_option("--seed", o.seed, "Seed for random masking, jigsaw and t-SNE")->capture_default_str();
  cmd->add_option("--labels", o.labels, "Class used for attribution: predicted | ground-truth")
      ->check(CLI::IsMember({"predicted", "ground-truth", "ground_truth"}))
      ->capture_default_str();
  cmd->add_flag("--figures", o.figures, "Also write SVG figures");
  cmd->add_flag("--sort-heads", o.sort_heads, "Sort heads within each layer in heatmaps");
}

iavkit::ReportSpec to_spec(const CommonOptions& o) {
  iavkit::ReportSpec spec;
  for (const auto& b : o.bundles) spec.bundles.emplace_back(b);
  spec.out_dir = o.out;
  spec.seed = o.seed;
  spec.labels = iavkit::parse_label_mode(o.labels);
  spec.figures = o.figures;
  spec.sort_heads = o.sort_heads;
  return spec;
}

std::vector<iavkit::JigsawSetting> parse_jigsaw(const std::vector<std::string>& items) {
  std::vector<iavkit::JigsawSetting> out;
  for (const auto& item : items) {
    std::istringstream in(item);
    std::size_t g = 0, k = 0;
    char comma = 0;
    if (!(in >> g >> comma >> k) || comma != ',') {
      throw CLI::ValidationError("--jigsaw", "expected g,k but got '" + item + "'");
    }
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& s) { return s.grid_size == g; });
    if (it == out.end()) {
      out.push_back({g, {}});
      it = out.end() - 1;
    }
    it->swaps.push_back(k);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention / input-attribution agreement analyses"};
  app.require_subcommand(1);

  // synth
  iavkit::SynthOptions synth;
  std::string synth_out;
  std::vector<std::size_t> image_shape{16, 16, 1};
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic bundle with the built-in toy ViT");
  synth_cmd->add_option("--out", synth_out, "Bundle directory to create")->required();
  synth_cmd->add_option("--n", synth.n_samples, "Number of samples")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "Seed for images and labels (and weights unless --model-seed)")
      ->capture_default_str();
  std::optional<std::uint64_t> model_seed;
  synth_cmd->add_option("--model-seed", model_seed, "Seed for model weights; vary it to make a checkpoint pair");
  synth_cmd->add_option("--image", image_shape, "Image rows cols channels")->expected(3);
  synth_cmd->add_option("--patch", synth.model.patch_size, "Patch size")->capture_default_str();
  synth_cmd->add_option("--layers", synth.model.n_layers, "Transformer layers")->capture_default_str();
  synth_cmd->add_option("--heads", synth.model.n_heads, "Heads per layer")->capture_default_str();
  synth_cmd->add_option("--dim", synth.model.embed_dim, "Embedding width")->capture_default_str();
  synth_cmd->add_option("--classes", synth.model.n_classes, "Number of classes")->capture_default_str();
  synth_cmd->add_option("--tag", synth.checkpoint_tag, "Checkpoint tag")->capture_default_str();
  synth_cmd->add_option("--occlusion-baseline", synth.occlusion_baseline, "Fill value for occluded patches")
      ->capture_default_str();

  // validate
  std::string validate_path;
  auto* validate_cmd = app.add_subcommand("validate", "Load a bundle and print its validation report");
  validate_cmd->add_option("--bundle", validate_path, "Bundle directory")->required();

  CommonOptions common;
  std::string baseline, final_bundle, model_dir;
  std::vector<double> ratios;
  std::vector<std::string> sources;
  std::vector<double> blur;
  std::vector<std::string> jig;
  std::size_t layer = 0;
  double fill = 0.0;

  auto analysis = [&](const std::string& name, const std::string& help) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, common);
    return cmd;
  };
  analysis("iav", "Per-sample IA-Score vectors");
  analysis("global-iav", "Mean IAV over samples");
  auto* aav_cmd = analysis("aav", "IAV against an external baseline map");
  aav_cmd->add_option("--baseline", baseline, "NPY baseline: [P], [N,P], [rows,cols] or [N,rows,cols]")->required();
  analysis("entropy", "Attention entropy per head");
  analysis("heads", "High/Low IA-Head classification");
  auto* mask_cmd = analysis("mask-curve", "Accuracy under saliency-guided masking");
  mask_cmd->add_option("--ratios", ratios, "Masking ratios in [0,1]");
  mask_cmd->add_option("--source", sources, "attention-mean | attribution | random | head:L,H (repeatable)");
  mask_cmd->add_option("--fill", fill, "Fill value for masked patches");
  mask_cmd->add_option("--model", model_dir, "Toy model directory (defaults to the bundle's own)");
  auto* perturb_cmd = analysis("perturb", "Accuracy under Gaussian blur and jigsaw");
  perturb_cmd->add_option("--blur", blur, "Blur sigmas");
  perturb_cmd->add_option("--jigsaw", jig, "Grid and swap count as g,k (repeatable)");
  perturb_cmd->add_option("--model", model_dir, "Toy model directory (defaults to the bundle's own)");
  auto* embed_cmd = analysis("embed", "t-SNE of per-layer IAV");
  embed_cmd->add_option("--layer", layer, "1-based layer (default: every layer)");
  auto* diff_cmd = analysis("diff", "Distance of checkpoint maps to the final model");
  diff_cmd->add_option("--final", final_bundle, "Final-model bundle")->required();
  auto* report_cmd = analysis("report", "Run every analysis the inputs allow");
  report_cmd->add_option("--baseline", baseline, "AAV baseline NPY");
  report_cmd->add_option("--final", final_bundle, "Final-model bundle for diff");
  report_cmd->add_option("--model", model_dir, "Toy model directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed()) {
      synth.model.image_rows = image_shape[0];
      synth.model.image_cols = image_shape[1];
      synth.model.channels = image_shape[2];
      synth.model.rng_seed = model_seed.value_or(synth.seed);
      iavkit::write_synthetic_bundle(synth, synth_out);
      std::cout << "wrote " << synth_out << '\n';
      return 0;
    }
    if (validate_cmd->parsed()) {
      const auto loaded = iavkit::load_bundle_with_report(validate_path);
      const auto& d = loaded.bundle.dims;
      nlohmann::json report = {{"bundle", validate_path},
                               {"n_samples", d.n_samples},
                               {"n_layers", d.n_layers},
                               {"n_heads", d.n_heads},
                               {"n_patches", d.n_patches},
                               {"n_classes", d.n_classes},
                               {"clamped_attribution_values", loaded.report.clamped_attribution_values},
                               {"renormalized_attention_rows", loaded.report.renormalized_attention_rows},
                               {"pooled_attribution", loaded.report.pooled_attribution},
                               {"valid", true}};
      std::cout << report.dump(2) << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "iavkit: " << e.what() << '\n';
    return 1;
  }

  iavkit::ReportSpec spec = to_spec(common);
  spec.baseline = baseline;
  spec.final_bundle = final_bundle;
  spec.model_dir = model_dir;
  spec.fill = fill;
  if (!ratios.empty()) spec.ratios = ratios;
  if (!sources.empty()) spec.sources = sources;
  if (!blur.empty() || !jig.empty()) {
    spec.blur_sigmas = blur;
    spec.jigsaw = parse_jigsaw(jig);
  }
  using iavkit::Analysis;
  const std::vector<std::pair<CLI::App*, Analysis>> single{
      {app.get_subcommand("iav"), Analysis::Iav},         {app.get_subcommand("global-iav"), Analysis::GlobalIav},
      {aav_cmd, Analysis::Aav},                           {app.get_subcommand("entropy"), Analysis::Entropy},
      {app.get_subcommand("heads"), Analysis::Heads},     {mask_cmd, Analysis::MaskCurve},
      {perturb_cmd, Analysis::Perturb},                   {embed_cmd, Analysis::Embed},
      {diff_cmd, Analysis::Diff}};
  for (const auto& [cmd, a] : single) {
    if (cmd->parsed()) spec.analyses.insert(a);
  }
  if (embed_cmd->parsed() && layer > 0) spec.embed_layer = layer - 1;
  if (report_cmd->parsed()) {
    spec.analyses.insert(iavkit::all_analyses().begin(), iavkit::all_analyses().end());
    spec.skip_unavailable = true;
  }
  return iavkit::run(spec, std::cerr).exit_code;
}
