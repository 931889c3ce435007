// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any fail.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "iavkit/iavkit.hpp"
#include "test_support.hpp"

using namespace iavkit;
namespace fs = std::filesystem;
namespace fx = iavkit::fixtures;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// Collects failures; `detail` keeps the first one plus the headline measurements.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_++ == 0) first_ = what;
  }
  void note(const std::string& s) { notes_ += (notes_.empty() ? "" : ", ") + s; }
  Outcome outcome() const {
    if (failures_ == 0) return {true, notes_};
    return {false, std::to_string(failures_) + " failure(s), first: " + first_ + (notes_.empty() ? "" : "; " + notes_)};
  }

 private:
  int failures_ = 0;
  std::string first_;
  std::string notes_;
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome ia_score_correctness() {
  Check c;
  Rng rng(1);
  double worst_oracle = 0.0, worst_scale = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const auto attr = fx::random_nonnegative(rng, 16, 0.3);
    const auto attn = fx::random_probability(rng, 16, 3.0);
    const double s = ia_score(attr, attn);
    c.expect(s >= 0.0 && s <= 1.0, "score outside [0,1]");
    worst_oracle = std::max(worst_oracle, std::abs(s - fx::oracle_cosine(attr, attn)));
    auto scaled = attr;
    const double k = std::exp(uniform(rng, -20, 20));
    for (double& x : scaled) x *= k;
    worst_scale = std::max(worst_scale, std::abs(ia_score(scaled, attn) - s));
  }
  c.expect(worst_oracle <= 1e-12, "oracle gap " + sci(worst_oracle));
  c.expect(worst_scale <= 1e-12, "scale gap " + sci(worst_scale));
  c.note("max |oracle diff| " + sci(worst_oracle) + ", max |scale diff| " + sci(worst_scale));
  return c.outcome();
}

Outcome iav_oracle_equivalence() {
  Check c;
  const std::size_t n = 16, layers = 2, heads = 2, p = 16;
  const AnalysisBundle b = fx::random_bundle(2, n, layers, heads, p);
  double worst = 0.0;
  std::vector<double> sums(layers * heads, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const IavVector v = iav(b, i, b.predictions[i]);
    c.expect(v.scores.size() == layers * heads, "IAV length");
    const auto attr = fx::row(b.attribution.slice({i}));
    for (std::size_t l = 0; l < layers; ++l) {
      for (std::size_t h = 0; h < heads; ++h) {
        const double o = fx::oracle_cosine(attr, fx::row(b.attention.slice({i, l, h})));
        sums[l * heads + h] += o;
        worst = std::max(worst, std::abs(v.at(l, h) - o));
      }
    }
  }
  const GlobalIav g = global_iav(b, LabelMode::Predicted);
  for (std::size_t k = 0; k < sums.size(); ++k) worst = std::max(worst, std::abs(g.scores[k] - sums[k] / n));
  c.expect(worst <= 1e-12, "oracle gap " + sci(worst));

  AnalysisBundle same = b;
  for (std::size_t i = 0; i < n; ++i) {
    auto attr = b.attribution.slice({i});
    for (std::size_t l = 0; l < layers; ++l) {
      for (std::size_t h = 0; h < heads; ++h) {
        auto row = same.attention.slice({i, l, h});
        double total = 0.0;
        for (double x : attr) total += x;
        for (std::size_t j = 0; j < p; ++j) row[j] = attr[j] / total;
      }
    }
  }
  const GlobalIav ones = global_iav(same, LabelMode::Predicted);
  double off = 0.0;
  for (double s : ones.scores.values()) off = std::max(off, std::abs(s - 1.0));
  c.expect(off <= 1e-9, "all-ones gap " + sci(off));
  c.note("max |oracle diff| " + sci(worst) + ", max |1 - score| " + sci(off));
  return c.outcome();
}

Outcome entropy_bounds() {
  Check c;
  for (std::size_t p : {4u, 16u, 196u}) {
    std::vector<double> one_hot(p, 0.0);
    one_hot[p / 2] = 1.0;
    c.expect(attention_entropy(one_hot) == 0.0, "one-hot entropy not exactly 0");
    const double u = attention_entropy(std::vector<double>(p, 1.0 / static_cast<double>(p)));
    c.expect(std::abs(u - std::log(static_cast<double>(p))) <= 1e-9, "uniform entropy " + sci(u));
  }
  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t p = 2 + uniform_index(rng, 200);
    const double h = attention_entropy(fx::random_probability(rng, p, uniform(rng, 0.2, 10)));
    c.expect(h >= 0.0 && h <= std::log(static_cast<double>(p)), "entropy outside [0, ln P]");
  }
  return c.outcome();
}

/// Attention [a, b, b, b] against attribution e1 has cosine a / sqrt(a^2 + 3 b^2).
std::vector<double> attention_with_cosine(double cosine) {
  if (cosine == 0.5) return {0.25, 0.25, 0.25, 0.25};
  const double r = std::sqrt(3.0 * cosine * cosine / (1.0 - cosine * cosine));
  const double b = 1.0 / (r + 3.0);
  return {r * b, b, b, b};
}

Outcome head_typing() {
  Check c;
  const std::vector<double> medians{0.2, 0.5, 0.8};
  const std::vector<double> offsets{-0.1, 0.0, 0.1};  // per sample; sample 1 carries the median
  AnalysisBundle b;
  b.dims = {3, 1, 3, 4, 1, 0, {}};
  b.attention = Tensor({3, 1, 3, 4});
  b.attribution = Tensor({3, 4}, {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0});
  b.labels = b.predictions = {0, 0, 0};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t h = 0; h < 3; ++h) {
      const auto row = attention_with_cosine(medians[h] + offsets[i]);
      std::copy(row.begin(), row.end(), b.attention.slice({i, 0, h}).begin());
    }
  }
  validate_bundle(b);
  const auto profiles = classify_heads(b);
  const std::vector<HeadType> expected{HeadType::Low, HeadType::High, HeadType::High};
  std::string got;
  for (std::size_t h = 0; h < 3; ++h) {
    c.expect(profiles[h].head_type == expected[h], "head " + std::to_string(h + 1) + " misclassified");
    got += (h ? "/" : "") + std::string(profiles[h].head_type == HeadType::High ? "High" : "Low");
  }
  c.expect(profiles[1].ia.median == 0.5, "tie median is " + format_double(profiles[1].ia.median));
  c.note("medians " + format_fixed(profiles[0].ia.median, 3) + "/" + format_double(profiles[1].ia.median) + "/" +
         format_fixed(profiles[2].ia.median, 3) + " -> " + got);
  return c.outcome();
}

Outcome toy_vit() {
  Check c;
  ViTConfig cfg;
  const ViTModel m = init_model(cfg);
  Rng rng(5);
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    Tensor image(cfg.image_shape());
    for (double& v : image.values()) v = uniform01(rng);
    const ForwardResult r = forward(m, image);
    const std::size_t tokens = cfg.n_patches() + 1;
    for (std::size_t row = 0; row < r.attention.size() / tokens; ++row) {
      double s = 0.0;
      for (std::size_t j = 0; j < tokens; ++j) s += r.attention[row * tokens + j];
      worst = std::max(worst, std::abs(s - 1.0));
    }
    const Tensor cls = extract_cls_attention(r.attention);
    for (std::size_t row = 0; row < cfg.n_layers * cfg.n_heads; ++row) {
      double s = 0.0;
      for (std::size_t j = 0; j < cfg.n_patches(); ++j) {
        const double v = cls[row * cfg.n_patches() + j];
        c.expect(v >= 0.0, "negative CLS attention");
        s += v;
      }
      c.expect(std::abs(s - 1.0) <= 1e-9, "CLS row sum " + format_double(s));
    }
    const ForwardResult again = forward(m, image);
    c.expect(again.attention == r.attention && again.scores == r.scores, "forward not bit-deterministic");
  }
  c.expect(worst <= 1e-9, "row sum gap " + sci(worst));
  c.note("max |row sum - 1| " + sci(worst));
  return c.outcome();
}

Outcome occlusion_linear() {
  Check c;
  Rng rng(6);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t ps = 1 + uniform_index(rng, 3), gr = 1 + uniform_index(rng, 4), gc = 1 + uniform_index(rng, 4);
    const std::size_t ch = 1 + uniform_index(rng, 3), classes = 1 + uniform_index(rng, 4);
    fx::LinearSurrogate f{ps, {}};
    for (std::size_t k = 0; k < classes; ++k) {
      std::vector<double> w(gr * gc);
      for (double& x : w) x = uniform(rng, -1, 1);
      f.weights.push_back(w);
    }
    Tensor image({gr * ps, gc * ps, ch});
    for (double& v : image.values()) v = uniform01(rng);
    const auto cls = static_cast<std::int64_t>(uniform_index(rng, classes));
    const AttributionMap map = occlusion_attribution(f, image, ps, cls, 0.0);
    for (std::size_t p = 0; p < gr * gc; ++p) {
      const double expected = std::max(0.0, f.weights[static_cast<std::size_t>(cls)][p] * fx::patch_mean(image, ps, p));
      worst = std::max(worst, std::abs(map.values[p] - expected));
    }
  }
  c.expect(worst <= 1e-12, "closed-form gap " + sci(worst));
  c.note("max |diff| " + sci(worst));
  return c.outcome();
}

Outcome perturbations() {
  Check c;
  Rng rng(7);
  Tensor image({12, 12, 3});
  for (double& v : image.values()) v = uniform01(rng);
  auto sorted = fx::row(image.values());
  std::sort(sorted.begin(), sorted.end());
  int combos = 0;
  for (std::size_t g : {1u, 2u, 3u, 4u, 6u, 12u}) {
    for (std::size_t k : {0u, 1u, 2u, 5u, 20u}) {
      if (g == 1 && k > 0) continue;
      const Tensor out = jigsaw(image, {g, k, 31 * g + k});
      auto v = fx::row(out.values());
      std::sort(v.begin(), v.end());
      c.expect(v == sorted, "jigsaw multiset changed at g=" + std::to_string(g) + " k=" + std::to_string(k));
      ++combos;
    }
  }

  for (std::size_t p : {16u, 196u}) {
    for (int tenth = 1; tenth <= 9; ++tenth) {
      const std::size_t expected = (static_cast<std::size_t>(tenth) * p + 9) / 10;
      c.expect(masked_patch_count(tenth / 10.0, p) == expected, "mask count at ratio " + std::to_string(tenth));
      // 4-pixel patches on a 4x4 or 14x14 grid.
      const std::size_t side = 4 * static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(p))));
      const Tensor img = Tensor::filled({side, side, 1}, 1.0);
      std::vector<double> sal(p);
      for (double& s : sal) s = uniform01(rng);
      const Tensor masked = mask_image(img, sal, tenth / 10.0, 0.0);
      std::size_t zeros = 0;
      for (double v : masked.values()) zeros += v == 0.0;
      c.expect(zeros == expected * 16, "masked pixel count at ratio " + std::to_string(tenth));
    }
  }

  SynthOptions o;
  o.n_samples = 24;
  o.seed = 8;
  o.model.rng_seed = 8;
  const AnalysisBundle b = make_synthetic_bundle(o);
  const ViTModel model = init_model(o.model);
  const Scorer scorer = make_scorer(model);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < b.n_samples(); ++i) correct += b.labels[i] == b.predictions[i];
  const double baseline = static_cast<double>(correct) / static_cast<double>(b.n_samples());
  for (const auto& src : {SaliencySource::attention_mean(), SaliencySource::attribution(), SaliencySource::random(1),
                          SaliencySource::attention_head(1, 0)}) {
    const double acc = masking_curve(b, scorer, src, {0.0})[0].accuracy;
    c.expect(acc == baseline, "ratio-0 accuracy differs for " + src.name());
  }
  c.note(std::to_string(combos) + " jigsaw (g,k) settings, ratio-0 accuracy " + format_double(baseline));
  return c.outcome();
}

/// Layers before the last carry independent attention in both bundles; only
/// the last layer differs in how it is drawn.
AnalysisBundle trend_bundle(bool last_layer_follows_attribution) {
  const std::size_t n = 32, layers = 4, heads = 3, p = 16;
  AnalysisBundle b = fx::random_bundle(9, n, layers, heads, p);
  Rng rng(10);
  for (std::size_t i = 0; i < n; ++i) {
    const auto attr = b.attribution.slice({i});
    for (std::size_t h = 0; h < heads; ++h) {
      auto row = b.attention.slice({i, layers - 1, h});
      std::vector<double> v(p);
      double total = 0.0;
      for (std::size_t j = 0; j < p; ++j) {
        v[j] = last_layer_follows_attribution ? attr[j] * uniform(rng, 0.8, 1.2) + 0.01 * uniform01(rng)
                                              : std::pow(uniform01(rng), 4.0) + 1e-3;
        total += v[j];
      }
      for (std::size_t j = 0; j < p; ++j) row[j] = v[j] / total;
    }
  }
  validate_bundle(b);
  return b;
}

Outcome trend_reproduction() {
  Check c;
  const GlobalIav a = global_iav(trend_bundle(true), LabelMode::Predicted);
  const GlobalIav b = global_iav(trend_bundle(false), LabelMode::Predicted);
  const double follow = a.layer_mean(a.n_layers - 1), independent = b.layer_mean(b.n_layers - 1);
  c.expect(follow - independent > 0.3, "difference only " + format_fixed(follow - independent, 4));
  c.note("last-layer mean " + format_fixed(follow, 4) + " vs " + format_fixed(independent, 4));
  return c.outcome();
}

Outcome tsne_criteria() {
  Check c;
  Rng rng(11);
  Tensor pts({150, 12});
  for (double& v : pts.values()) v = standard_normal(rng);
  const Affinities aff = compute_affinities(pts, 30.0);
  double total = 0.0;
  for (double v : aff.joint.values()) total += v;
  c.expect(std::abs(total - 1.0) <= 1e-9, "P sums to " + format_double(total));
  double worst = 0.0;
  for (double p : aff.perplexity) worst = std::max(worst, std::abs(p - aff.target_perplexity));
  c.expect(worst <= 1e-3, "perplexity gap " + sci(worst));

  const auto [clusters, labels] = fx::gaussian_clusters(12, 3, 20, 144, 10.0);
  const Tensor y = tsne(clusters, TsneConfig{});
  const double sil = fx::oracle_silhouette(fx::row(y.values()), labels);
  c.expect(sil > 0.5, "silhouette " + format_fixed(sil, 4));

  Tensor big({300, 144});
  for (double& v : big.values()) v = standard_normal(rng);
  const auto t0 = std::chrono::steady_clock::now();
  tsne(big, TsneConfig{});
  const double secs = seconds_since(t0);
  c.expect(secs < 60.0, "N=300 took " + format_fixed(secs, 2) + " s");
  c.note("|sum P - 1| " + sci(std::abs(total - 1.0)) + ", max perplexity gap " + sci(worst) + ", silhouette " +
         format_fixed(sil, 3) + ", N=300 in " + format_fixed(secs, 2) + " s");
  return c.outcome();
}

Outcome end_to_end() {
  Check c;
  const fs::path dir = fx::temp_dir("acceptance_e2e");
  const auto t0 = std::chrono::steady_clock::now();
  const auto synth = fx::run_cli("synth --out " + (dir / "bundle").string() +
                                 " --n 64 --layers 2 --heads 2 --image 16 16 1 --patch 4 --seed 13");
  c.expect(synth.exit_code == 0, "synth failed: " + synth.output);
  const auto first = fx::run_cli("report --bundle " + (dir / "bundle").string() + " --out " + (dir / "r1").string() +
                                 " --seed 13 --figures");
  const double secs = seconds_since(t0);
  c.expect(first.exit_code == 0, "report failed: " + first.output);
  c.expect(secs < 10.0, "synth + report took " + format_fixed(secs, 2) + " s");
  const auto second = fx::run_cli("report --bundle " + (dir / "bundle").string() + " --out " + (dir / "r2").string() +
                                  " --seed 13 --figures");
  c.expect(second.exit_code == 0, "second report failed");
  const auto bundle = load_bundle(dir / "bundle");
  c.expect(bundle.dims.n_patches == 16 && bundle.dims.n_samples == 64, "unexpected bundle dimensions");
  int csvs = 0;
  for (const auto& e : fs::directory_iterator(dir / "r1")) {
    if (e.path().extension() != ".csv") continue;
    ++csvs;
    const auto name = e.path().filename();
    c.expect(fx::read_text(e.path()) == fx::read_text(dir / "r2" / name), name.string() + " differs across runs");
  }
  c.expect(csvs >= 7, "only " + std::to_string(csvs) + " CSVs written");
  c.note(std::to_string(csvs) + " CSVs byte-identical, synth + report in " + format_fixed(secs, 2) + " s");
  return c.outcome();
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"IA-Score correctness", ia_score_correctness},
      {"IAV/global-IAV oracle equivalence", iav_oracle_equivalence},
      {"Entropy bounds and extremes", entropy_bounds},
      {"Head typing", head_typing},
      {"Toy ViT", toy_vit},
      {"Occlusion attribution", occlusion_linear},
      {"Perturbations", perturbations},
      {"Qualitative trend at toy scale", trend_reproduction},
      {"t-SNE", tsne_criteria},
      {"End-to-end synth -> report", end_to_end},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << name << (o.detail.empty() ? "" : ": " + o.detail) << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
