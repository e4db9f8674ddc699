#include "mmnas/report.hpp"

#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mmnas {

namespace {

std::string bits_str(const std::vector<std::uint8_t>& bits) {
  std::string s;
  for (auto b : bits) s += b ? '1' : '0';
  return s.empty() ? "-" : s;
}

const char* color(ActivationKind a) {
  switch (a) {
    case ActivationKind::Identity:
      return "orange";
    case ActivationKind::Tanh:
      return "yellow";
    case ActivationKind::Sigmoid:
      return "green";
    case ActivationKind::ReLU:
      return "pink";
  }
  return "white";
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

VarianceTable aggregate(std::vector<VarianceRow> rows) {
  if (rows.size() < 2)
    throw std::invalid_argument("aggregate: need at least two runs (std dev undefined), got " +
                                std::to_string(rows.size()));
  VarianceTable t;
  t.rows = std::move(rows);
  const auto n = static_cast<double>(t.rows.size());
  auto column = [&](double VarianceRow::*field) {
    double sum = 0;
    for (const auto& r : t.rows) sum += r.*field;
    const double mean = sum / n;
    double ss = 0;
    for (const auto& r : t.rows) ss += (r.*field - mean) * (r.*field - mean);
    t.mean.*field = mean;
    t.std_dev.*field = std::sqrt(ss / (n - 1.0));
  };
  column(&VarianceRow::accuracy);
  column(&VarianceRow::feature_params);
  column(&VarianceRow::fusion_params);
  t.mean.label = "Mean";
  t.std_dev.label = "Std Dev";
  return t;
}

VarianceTable aggregate(const std::vector<RunRecord>& records) {
  std::vector<VarianceRow> rows;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    rows.push_back({std::to_string(i + 1), r.test_accuracy.value_or(r.best_val_accuracy),
                    static_cast<double>(r.best_params.feature),
                    static_cast<double>(r.best_params.fusion)});
  }
  return aggregate(std::move(rows));
}

std::string emit_table(const VarianceTable& table, TableFormat format) {
  std::ostringstream os;
  auto line = [&](const VarianceRow& r) {
    if (format == TableFormat::Markdown)
      os << "| " << r.label << " | " << format_number(r.accuracy) << " | "
         << format_number(r.feature_params) << " | " << format_number(r.fusion_params) << " |\n";
    else
      os << r.label << "," << format_number(r.accuracy) << "," << format_number(r.feature_params)
         << "," << format_number(r.fusion_params) << "\n";
  };
  if (format == TableFormat::Markdown)
    os << "| Exp # | Accuracy | # Feat Params | # Fusion Params |\n|---|---|---|---|\n";
  else
    os << "exp,accuracy,feat_params,fusion_params\n";
  for (const auto& r : table.rows) line(r);
  line(table.mean);
  line(table.std_dev);
  return os.str();
}

std::string emit_results_table(const std::vector<RunRecord>& records) {
  std::ostringstream os;
  os << "| Run | Seed | Accuracy (%) | Search Time (CPU h) | Modality | Architecture Budget | "
        "Automatic |\n|---|---|---|---|---|---|---|\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    char acc[32], hours[32];
    std::snprintf(acc, sizeof acc, "%.2f", 100.0 * r.test_accuracy.value_or(r.best_val_accuracy));
    std::snprintf(hours, sizeof hours, "%.2f", r.search_seconds / 3600.0);
    os << "| " << i + 1 << " | " << r.seed << " | " << acc
       << (r.test_accuracy ? "" : " (val)") << " | " << hours << " | Bi-modal | "
       << r.config.budget << " | Yes |\n";
  }
  return os.str();
}

int fusion_taps_set(const FusionSpec& fusion) {
  int n = 0;
  for (const auto& l : fusion.layers) {
    for (auto b : l.taps_x) n += b ? 1 : 0;
    for (auto b : l.taps_y) n += b ? 1 : 0;
  }
  return n;
}

int fusion_taps_possible(const FusionSpec& fusion) {
  int n = 0;
  for (const auto& l : fusion.layers) n += static_cast<int>(l.taps_x.size() + l.taps_y.size());
  return n;
}

double fusion_connectivity(const FusionSpec& fusion) {
  const int possible = fusion_taps_possible(fusion);
  return possible ? static_cast<double>(fusion_taps_set(fusion)) / possible : 0.0;
}

std::string emit_arch_summary(const ArchitectureSpec& spec) {
  std::ostringstream os;
  os << "architecture " << hash_hex(canonical_hash(spec)) << "\n";
  os << "width " << spec.width << ", fusion width " << spec.fusion_width << ", classes "
     << spec.num_classes << "\n";
  const std::array<const CellSpec*, 2> cells = {&spec.cell_x, &spec.cell_y};
  const char* names[2] = {"x", "y"};
  for (int m = 0; m < 2; ++m) {
    os << "cell " << names[m] << " (repeated " << spec.repeats[m] << "x)\n";
    for (std::size_t l = 0; l < cells[m]->layers.size(); ++l) {
      const auto& layer = cells[m]->layers[l];
      os << "  layer " << l + 1 << ": " << to_string(layer.op) << " + "
         << to_string(layer.activation) << ", skips " << bits_str(layer.skips) << "\n";
    }
  }
  os << "fusion (" << spec.fusion.layers.size() << " layers)\n";
  for (std::size_t d = 0; d < spec.fusion.layers.size(); ++d) {
    const auto& f = spec.fusion.layers[d];
    os << "  depth " << d + 1 << ": " << to_string(f.activation) << ", taps x "
       << bits_str(f.taps_x) << ", taps y " << bits_str(f.taps_y) << "\n";
  }
  char frac[32];
  std::snprintf(frac, sizeof frac, "%.3f", fusion_connectivity(spec.fusion));
  os << "fusion connectivity " << fusion_taps_set(spec.fusion) << "/"
     << fusion_taps_possible(spec.fusion) << " = " << frac << "\n";
  return os.str();
}

std::string emit_arch_dot(const ArchitectureSpec& spec) {
  std::ostringstream os;
  os << "digraph architecture {\n  node [style=filled, shape=box];\n";
  const std::array<const CellSpec*, 2> cells = {&spec.cell_x, &spec.cell_y};
  const char* names[2] = {"x", "y"};
  for (int m = 0; m < 2; ++m) {
    const std::string p = names[m];
    os << "  subgraph cluster_cell_" << p << " {\n    label=\"cell " << p << "\";\n";
    os << "    " << p << "_in [label=\"input\", fillcolor=lightgray];\n";
    for (std::size_t l = 0; l < cells[m]->layers.size(); ++l) {
      const auto& layer = cells[m]->layers[l];
      os << "    " << p << "_l" << l + 1 << " [label=\"" << to_string(layer.op)
         << "\", fillcolor=" << color(layer.activation) << "];\n";
    }
    for (std::size_t l = 0; l < cells[m]->layers.size(); ++l) {
      auto node = [&](std::size_t j) {
        return j == 0 ? p + "_in" : p + "_l" + std::to_string(j);
      };
      os << "    " << node(l) << " -> " << p << "_l" << l + 1 << ";\n";
      const auto& skips = cells[m]->layers[l].skips;
      for (std::size_t j = 0; j < skips.size(); ++j)
        if (skips[j])
          os << "    " << node(j) << " -> " << p << "_l" << l + 1 << " [style=dashed];\n";
    }
    os << "  }\n";
  }
  os << "  subgraph cluster_fusion {\n    label=\"fusion\";\n";
  for (int m = 0; m < 2; ++m)
    for (int c = 1; c <= spec.repeats[m]; ++c)
      os << "    " << names[m] << "_cell" << c << " [label=\"" << names[m] << " cell " << c
         << "\", shape=ellipse, fillcolor=white];\n";
  for (std::size_t d = 0; d < spec.fusion.layers.size(); ++d) {
    const auto& f = spec.fusion.layers[d];
    os << "    f" << d + 1 << " [label=\"fusion " << d + 1 << "\", fillcolor=" << color(f.activation)
       << "];\n";
    for (std::size_t c = 0; c < f.taps_x.size(); ++c)
      if (f.taps_x[c]) os << "    x_cell" << c + 1 << " -> f" << d + 1 << ";\n";
    for (std::size_t c = 0; c < f.taps_y.size(); ++c)
      if (f.taps_y[c]) os << "    y_cell" << c + 1 << " -> f" << d + 1 << ";\n";
    if (d > 0) os << "    f" << d << " -> f" << d + 1 << ";\n";
  }
  os << "  }\n}\n";
  return os.str();
}

std::string emit_method_card() {
  return R"(# Method card: multimodal random architecture search

Answers to the human-intervention checklist for this tool.

| Criterion | Answer |
|---|---|
| Requirements | No pre-defined or pre-trained feature extractors. The per-modality extractors (stacked DAG cells) are sampled as part of the search. |
| Search space design | Standard spaces only: a micro cell of 3x3/5x5 convolutions, 3x3/5x5 depthwise-separable convolutions, 3x3 max and average pooling with ReLU/Tanh/Identity/Sigmoid activations and sampled skip edges; a fully connected fusion stack whose inputs are globally pooled cell outputs. Both extractors and fusion are searched. |
| Training procedure | One stage, end to end: plain cross-entropy with Adam for every sampled network and for the final network. No auxiliary losses, freezing or fine-tuning phases. |
| Cost of new modalities | The search is repeated from scratch. A new modality needs an input stem and a cell sampler; no knowledge is transferred between searches. |
| Code availability | Yes. Source, command-line tool and Python bindings are in this repository. |

Variance across seeds is reported with `report --runs ...` over independent
search runs (mean and sample standard deviation of accuracy and parameter
counts).
)";
}

}  // namespace mmnas
