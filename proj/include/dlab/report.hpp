#pragma once

#include <string>
#include <vector>

#include "dlab/errors.hpp"

namespace dlab {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const CsvTable& table);

// Renderers are pure: same table in, same bytes out. Canvas is fixed at
// 640x420 and every coordinate is formatted with fixed precision.
std::string render_heldout_svg(const CsvTable& matrix);
std::string render_probe_svg(const CsvTable& probe);
std::string render_attribution_svg(const CsvTable& attribution);

// Reads matrix.csv / probe.csv / attribution.csv from run_dir and writes
// heldout_vs_stage.svg, ntb_vs_step.svg, attribution_layers.svg next to them.
// A missing or empty input is an error naming that file. Inputs that are
// absent because the corresponding command never ran are still errors; the
// report covers a complete run directory.
void emit_report(const std::string& run_dir);

}  // namespace dlab
