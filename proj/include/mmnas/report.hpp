#ifndef MMNAS_REPORT_HPP
#define MMNAS_REPORT_HPP

#include <string>
#include <vector>

#include "mmnas/search.hpp"
#include "mmnas/search_space.hpp"

namespace mmnas {

struct VarianceRow {
  std::string label;  // run id, "Mean" or "Std Dev"
  double accuracy = 0.0;
  double feature_params = 0.0;
  double fusion_params = 0.0;
};

// Per-run rows plus mean and sample (n-1) standard deviation over exactly
// those rows.
struct VarianceTable {
  std::vector<VarianceRow> rows;
  VarianceRow mean;
  VarianceRow std_dev;
};

VarianceTable aggregate(std::vector<VarianceRow> rows);

// Accuracy column is the final test accuracy when present, otherwise the
// best validation accuracy of the search.
VarianceTable aggregate(const std::vector<RunRecord>& records);

enum class TableFormat { Markdown, Csv };

// Numbers are printed in shortest round-trip form so the Mean/Std rows can
// be recomputed exactly from the printed rows.
std::string emit_table(const VarianceTable& table, TableFormat format);

// Accuracy / search time / modality / budget / automatic, one row per run.
std::string emit_results_table(const std::vector<RunRecord>& records);

// Set tap bits over possible tap bits across all fusion depths.
double fusion_connectivity(const FusionSpec& fusion);
int fusion_taps_set(const FusionSpec& fusion);
int fusion_taps_possible(const FusionSpec& fusion);

std::string emit_arch_summary(const ArchitectureSpec& spec);
std::string emit_arch_dot(const ArchitectureSpec& spec);

// Human-intervention checklist answered for this tool.
std::string emit_method_card();

// Shortest decimal that round-trips to the same double.
std::string format_number(double v);

}  // namespace mmnas

#endif  // MMNAS_REPORT_HPP
