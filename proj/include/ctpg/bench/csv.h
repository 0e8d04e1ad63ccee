#ifndef CTPG_BENCH_CSV_H_
#define CTPG_BENCH_CSV_H_

#include <fstream>
#include <string>
#include <vector>

namespace ctpg::bench {

// Truncates `path`, writes "# config=<fingerprint> version=<v> command=<c>"
// and then the header row.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::string& command,
            const std::string& fingerprint, const std::vector<std::string>& header);

  void row(const std::vector<std::string>& cells);
  void close();

 private:
  std::ofstream out_;
  size_t columns_;
  std::string path_;
};

// Shortest representation that round-trips; "inf"/"nan" for non-finite.
std::string fmt(double value);
std::string fmt(long long value);

std::string artifact_version();

// results.csv -> results.plot.py
std::string plot_script_path(const std::string& csv_path);
// Writes a standalone matplotlib script that reads `csv_path`.
void write_plot_script(const std::string& csv_path, const std::string& command);

}  // namespace ctpg::bench

#endif  // CTPG_BENCH_CSV_H_
