#include "ctpg/bench/csv.h"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#ifndef CTPG_VERSION
#define CTPG_VERSION "0.0.0"
#endif

namespace ctpg::bench {
namespace {

const char* kPlotPreamble = R"py(import csv
import os
import sys

import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def load(name):
    with open(os.path.join(HERE, name)) as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


)py";

const char* kParetoBody = R"py(rows = load(CSV)
fig, ax = plt.subplots(figsize=(6, 4))
for estimator in sorted({r["estimator"] for r in rows}):
    pts = {}
    for r in rows:
        if r["estimator"] != estimator:
            continue
        calls = int(r["n_f"]) + int(r["n_dfdx"]) + int(r["n_dfdu"])
        pts.setdefault(r["config"], []).append((calls, float(r["grad_error"])))
    xs = [sum(c for c, _ in v) / len(v) for v in pts.values()]
    ys = [sum(e for _, e in v) / len(v) for v in pts.values()]
    order = sorted(range(len(xs)), key=lambda i: xs[i])
    ax.loglog([xs[i] for i in order], [ys[i] for i in order], "o-", label=estimator)
ax.set_xlabel("oracle calls (f + df/dx + df/du)")
ax.set_ylabel("relative gradient error")
ax.legend()
fig.tight_layout()
)py";

const char* kTrainBody = R"py(rows = load(CSV)
calls = [int(r["n_f"]) + int(r["n_dfdx"]) + int(r["n_dfdu"]) for r in rows]
loss = [float(r["mean_loss"]) for r in rows]
fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))
a.plot([int(r["iteration"]) for r in rows], loss)
a.set_xlabel("iteration")
a.set_ylabel("mean loss")
b.plot(calls, loss)
b.set_xscale("log")
b.set_xlabel("cumulative oracle calls")
fig.tight_layout()
)py";

const char* kInstabilityBody = R"py(rows = load(CSV)
fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
for ax, estimator in zip(axes, ["node", "ctpg"]):
    sel = [r for r in rows if r["estimator"] == estimator]
    if not sel:
        continue
    it = [int(r["iteration"]) for r in sel]
    ax.semilogy(it, [float(r["loss"]) for r in sel], label="loss")
    if estimator == "node":
        ax.semilogy(it, [float(r["aux"]) for r in sel], label="|x(0) - x_rec(0)|^2")
    ax.set_title(estimator)
    ax.set_xlabel("iteration")
    ax.legend()
fig.tight_layout()
)py";

const char* kEigsBody = R"py(rows = load(CSV)
fig, ax = plt.subplots(figsize=(5, 5))
for probe in sorted({r["probe"] for r in rows}):
    sel = [r for r in rows if r["probe"] == probe]
    ax.scatter([float(r["re"]) for r in sel], [float(r["im"]) for r in sel], s=12, label=probe)
ax.axvline(0, color="k", lw=0.5)
ax.set_xlabel("Re")
ax.set_ylabel("Im")
ax.legend(fontsize=6)
fig.tight_layout()
)py";

const char* kPlotTail = R"py(
if len(sys.argv) > 1:
    fig.savefig(sys.argv[1])
else:
    plt.show()
)py";

}  // namespace

CsvWriter::CsvWriter(const std::string& path, const std::string& command,
                     const std::string& fingerprint,
                     const std::vector<std::string>& header)
    : out_(path, std::ios::trunc), columns_(header.size()), path_(path) {
  if (!out_) throw std::runtime_error("cannot write '" + path + "'");
  out_ << "# config=" << fingerprint << " version=" << artifact_version()
       << " command=" << command << "\n";
  row(header);
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != columns_) {
    throw std::logic_error("csv row has " + std::to_string(cells.size()) +
                           " cells, header has " + std::to_string(columns_));
  }
  for (size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    out_ << cells[i];
  }
  out_ << '\n';
}

void CsvWriter::close() {
  out_.close();
  if (!out_) throw std::runtime_error("failed writing '" + path_ + "'");
}

std::string fmt(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string fmt(long long value) { return std::to_string(value); }

std::string artifact_version() { return CTPG_VERSION; }

std::string plot_script_path(const std::string& csv_path) {
  std::filesystem::path p(csv_path);
  p.replace_extension(".plot.py");
  return p.string();
}

void write_plot_script(const std::string& csv_path, const std::string& command) {
  const char* body = nullptr;
  if (command == "pareto") body = kParetoBody;
  if (command == "train") body = kTrainBody;
  if (command == "instability") body = kInstabilityBody;
  if (command == "eigs") body = kEigsBody;
  if (body == nullptr) return;
  const std::string path = plot_script_path(csv_path);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "# Plots " << std::filesystem::path(csv_path).filename().string()
      << "; pass an output file name to save instead of showing.\n"
      << kPlotPreamble << "CSV = \"" << std::filesystem::path(csv_path).filename().string()
      << "\"\n" << body << kPlotTail;
}

}  // namespace ctpg::bench
