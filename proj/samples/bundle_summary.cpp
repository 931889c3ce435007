// Loads a bundle directory and prints its global-IAV heatmap as text plus the
// High/Low split of heads. Usage: bundle_summary <bundle-dir>

#include <iostream>

#include "iavkit/iavkit.hpp"

int main(int argc, char** argv) {
  using namespace iavkit;
  if (argc != 2) {
    std::cerr << "usage: bundle_summary <bundle-dir>\n";
    return 2;
  }
  try {
    const LoadedBundle loaded = load_bundle_with_report(argv[1]);
    const AnalysisBundle& bundle = loaded.bundle;
    std::cout << bundle.n_samples() << " samples, " << bundle.dims.n_layers << " layers x " << bundle.dims.n_heads
              << " heads, " << bundle.dims.n_patches << " patches\n";

    const GlobalIav g = global_iav(bundle, LabelMode::Predicted);
    for (std::size_t l = 0; l < g.n_layers; ++l) {
      std::cout << "layer " << l + 1 << ":";
      for (std::size_t h = 0; h < g.n_heads; ++h) std::cout << ' ' << format_fixed(g.at(l, h), 3);
      std::cout << "  (mean " << format_fixed(g.layer_mean(l), 3) << ")\n";
    }

    std::size_t high = 0;
    for (const HeadProfile& p : classify_heads(bundle)) high += p.head_type == HeadType::High;
    std::cout << high << " High-IA heads, " << g.n_layers * g.n_heads - high << " Low-IA heads\n";
  } catch (const Error& e) {
    std::cerr << "bundle_summary: " << e.what() << "\n";
    return 1;
  }
}
