#ifndef AMRPG_PLOT_HPP
#define AMRPG_PLOT_HPP

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace amrpg {

/// Raised when there is nothing to draw. No file is written in that case.
class EmptyPlotError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Minimal CSV table: header plus rows of raw string cells. Values keep their
/// original text so that a plot can quote exactly what was logged.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;  // throws if absent
  double number(std::size_t row, std::size_t col) const;
};

CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::filesystem::path& path);

/// Mean cost and retained dimensions per epoch, one line per seed.
/// Input: metrics.csv.
std::string training_curves_svg(const CsvTable& metrics);

/// Top-k saliency ranks as bars on a log axis with +-std error bars.
/// Input: a rank,mean,std table.
std::string saliency_bars_svg(const CsvTable& ranks, std::size_t top_k = 15);

/// Number of seeds per memory-state count. Input: a states,seeds table.
std::string state_histogram_svg(const CsvTable& histogram);

/// Writes through a temporary file and renames, so readers never observe a
/// partially written SVG.
void write_text_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace amrpg

#endif  // AMRPG_PLOT_HPP
