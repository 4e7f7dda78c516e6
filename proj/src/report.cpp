#include "dlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace dlab {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 420;
constexpr double kPlotLeft = 64.0;
constexpr double kPlotRight = 616.0;
constexpr double kPlotTop = 40.0;
constexpr double kPlotBottom = 368.0;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string fmt_tick(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

double parse_num(const std::string& s, const std::string& file) {
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw FormatError("report: bad number '" + s + "' in " + file);
    return v;
}

struct Svg {
    std::ostringstream out;

    Svg(const std::string& title) {
        out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
            << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth
            << " " << kHeight << "\">\n";
        out << "<rect width=\"" << kWidth << "\" height=\"" << kHeight
            << "\" fill=\"white\"/>\n";
        text(kWidth / 2.0, 22.0, title, "middle", 15);
    }

    void line(double x1, double y1, double x2, double y2,
              const std::string& stroke, const std::string& extra = "") {
        out << "<line x1=\"" << fmt(x1) << "\" y1=\"" << fmt(y1) << "\" x2=\""
            << fmt(x2) << "\" y2=\"" << fmt(y2) << "\" stroke=\"" << stroke
            << "\"" << extra << "/>\n";
    }

    void polyline(const std::vector<std::pair<double, double>>& pts,
                  const std::string& stroke) {
        out << "<polyline fill=\"none\" stroke=\"" << stroke
            << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (i) out << " ";
            out << fmt(pts[i].first) << "," << fmt(pts[i].second);
        }
        out << "\"/>\n";
    }

    void circle(double x, double y, const std::string& fill) {
        out << "<circle cx=\"" << fmt(x) << "\" cy=\"" << fmt(y)
            << "\" r=\"3\" fill=\"" << fill << "\"/>\n";
    }

    void rect(double x, double y, double w, double h, const std::string& fill) {
        out << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" width=\""
            << fmt(w) << "\" height=\"" << fmt(h) << "\" fill=\"" << fill
            << "\"/>\n";
    }

    void text(double x, double y, const std::string& s,
              const std::string& anchor, int size) {
        out << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(y)
            << "\" font-family=\"sans-serif\" font-size=\"" << size
            << "\" text-anchor=\"" << anchor << "\">" << s << "</text>\n";
    }

    void axes() {
        line(kPlotLeft, kPlotTop, kPlotLeft, kPlotBottom, "black");
        line(kPlotLeft, kPlotBottom, kPlotRight, kPlotBottom, "black");
    }

    void x_tick(double x, const std::string& label) {
        line(x, kPlotBottom, x, kPlotBottom + 5, "black");
        text(x, kPlotBottom + 20, label, "middle", 12);
    }

    void y_tick(double y, const std::string& label) {
        line(kPlotLeft - 5, y, kPlotLeft, y, "black");
        text(kPlotLeft - 9, y + 4, label, "end", 12);
    }

    std::string finish() {
        out << "</svg>\n";
        return out.str();
    }
};

// Smallest value of the form {1, 2, 5} * 10^k that is >= v.
double nice_ceil(double v) {
    if (v <= 0.0) return 1.0;
    double mag = std::pow(10.0, std::floor(std::log10(v)));
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (m * mag >= v - 1e-12 * mag) return m * mag;
    return 10.0 * mag;
}

int find_column(const CsvTable& t, const std::string& name,
                const std::string& file) {
    for (std::size_t i = 0; i < t.header.size(); ++i)
        if (t.header[i] == name) return static_cast<int>(i);
    throw FormatError("report: " + file + " lacks column '" + name + "'");
}

void require_rows(const CsvTable& t, const std::string& file) {
    if (t.rows.empty())
        throw FormatError("report: " + file + " has no data rows");
}

}  // namespace

CsvTable read_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("report: missing input file " + path);
    CsvTable table;
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                fields.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        fields.push_back(cur);
        if (first) {
            table.header = fields;
            first = false;
        } else {
            if (fields.size() != table.header.size())
                throw FormatError("report: ragged row in " + path);
            table.rows.push_back(fields);
        }
    }
    if (first) throw FormatError("report: " + path + " has no data rows");
    return table;
}

void write_csv(const std::string& path, const CsvTable& table) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError("report: cannot write " + path);
    for (std::size_t i = 0; i < table.header.size(); ++i)
        f << (i ? "," : "") << table.header[i];
    f << "\n";
    for (const auto& row : table.rows) {
        for (std::size_t i = 0; i < row.size(); ++i)
            f << (i ? "," : "") << row[i];
        f << "\n";
    }
}

std::string render_heldout_svg(const CsvTable& matrix) {
    require_rows(matrix, "matrix.csv");
    int stage_col = find_column(matrix, "stage", "matrix.csv");
    int task_col = find_column(matrix, "task", "matrix.csv");
    int acc_col = find_column(matrix, "accuracy", "matrix.csv");

    std::map<int, double> by_stage;
    for (const auto& row : matrix.rows) {
        if (row[task_col] != "held_out") continue;
        int stage = static_cast<int>(
            parse_num(row[stage_col], "matrix.csv"));
        by_stage[stage] = parse_num(row[acc_col], "matrix.csv");
    }
    if (by_stage.empty())
        throw FormatError("report: matrix.csv has no held_out rows");

    int max_stage = by_stage.rbegin()->first;
    double xspan = std::max(1, max_stage);
    auto xpos = [&](int stage) {
        return kPlotLeft +
               (kPlotRight - kPlotLeft) * static_cast<double>(stage) / xspan;
    };
    auto ypos = [&](double acc) {
        return kPlotBottom - (kPlotBottom - kPlotTop) * acc / 100.0;
    };

    Svg svg("Held-out accuracy across stages");
    svg.axes();
    for (int stage = 0; stage <= max_stage; ++stage)
        svg.x_tick(xpos(stage), fmt_tick(stage));
    for (int acc = 0; acc <= 100; acc += 20)
        svg.y_tick(ypos(acc), fmt_tick(acc));
    svg.text((kPlotLeft + kPlotRight) / 2.0, kHeight - 12.0, "stage",
             "middle", 13);
    svg.text(16.0, (kPlotTop + kPlotBottom) / 2.0, "accuracy", "middle", 13);

    std::vector<std::pair<double, double>> pts;
    for (const auto& [stage, acc] : by_stage)
        pts.push_back({xpos(stage), ypos(acc)});
    svg.polyline(pts, "#4c78a8");
    for (const auto& p : pts) svg.circle(p.first, p.second, "#4c78a8");
    return svg.finish();
}

std::string render_probe_svg(const CsvTable& probe) {
    require_rows(probe, "probe.csv");
    int step_col = find_column(probe, "checkpoint_step", "probe.csv");
    int ntb_col = find_column(probe, "ntb", "probe.csv");

    std::map<int, double> by_step;
    for (const auto& row : probe.rows) {
        int step = static_cast<int>(parse_num(row[step_col], "probe.csv"));
        by_step[step] = parse_num(row[ntb_col], "probe.csv");
    }
    bool has_baseline = by_step.count(0) > 0;
    double baseline = has_baseline ? by_step[0] : 0.0;
    by_step.erase(0);
    if (by_step.empty())
        throw FormatError("report: probe.csv has no positive-step rows");

    int min_step = by_step.begin()->first;
    int max_step = by_step.rbegin()->first;
    double lo = std::log10(static_cast<double>(min_step));
    double hi = std::log10(static_cast<double>(max_step));
    if (hi - lo < 1e-9) hi = lo + 1.0;
    auto xpos = [&](int step) {
        return kPlotLeft + (kPlotRight - kPlotLeft) *
                               (std::log10(static_cast<double>(step)) - lo) /
                               (hi - lo);
    };
    double ymax = baseline;
    for (const auto& [step, v] : by_step) ymax = std::max(ymax, v);
    ymax = nice_ceil(ymax);
    auto ypos = [&](double v) {
        return kPlotBottom - (kPlotBottom - kPlotTop) * v / ymax;
    };

    Svg svg("Numeric-token bias vs. tuning step");
    svg.axes();
    for (double tick = 1.0; tick <= static_cast<double>(max_step) + 0.5;
         tick *= 10.0)
        if (tick >= min_step)
            svg.x_tick(xpos(static_cast<int>(tick)), fmt_tick(tick));
    for (int i = 0; i <= 5; ++i) {
        double v = ymax * i / 5.0;
        svg.y_tick(ypos(v), fmt_tick(v));
    }
    svg.text((kPlotLeft + kPlotRight) / 2.0, kHeight - 12.0, "step (log)",
             "middle", 13);
    svg.text(16.0, (kPlotTop + kPlotBottom) / 2.0, "NTB", "middle", 13);

    if (has_baseline) {
        svg.line(kPlotLeft, ypos(baseline), kPlotRight, ypos(baseline),
                 "#888888", " stroke-dasharray=\"6,4\"");
        svg.text(kPlotRight, ypos(baseline) - 6.0, "base", "end", 11);
    }
    std::vector<std::pair<double, double>> pts;
    for (const auto& [step, v] : by_step) pts.push_back({xpos(step), ypos(v)});
    svg.polyline(pts, "#f58518");
    for (const auto& p : pts) svg.circle(p.first, p.second, "#f58518");
    return svg.finish();
}

std::string render_attribution_svg(const CsvTable& attribution) {
    require_rows(attribution, "attribution.csv");
    int step_col = find_column(attribution, "checkpoint_step",
                               "attribution.csv");
    int layer_col = find_column(attribution, "layer", "attribution.csv");
    int path_col = find_column(attribution, "pathway", "attribution.csv");
    int value_col = find_column(attribution, "value", "attribution.csv");

    int max_step = 0;
    for (const auto& row : attribution.rows)
        max_step = std::max(
            max_step,
            static_cast<int>(parse_num(row[step_col], "attribution.csv")));

    std::map<int, std::map<std::string, double>> by_layer;
    for (const auto& row : attribution.rows) {
        int step = static_cast<int>(
            parse_num(row[step_col], "attribution.csv"));
        if (step != max_step) continue;
        int layer = static_cast<int>(
            parse_num(row[layer_col], "attribution.csv"));
        by_layer[layer][row[path_col]] =
            parse_num(row[value_col], "attribution.csv");
    }
    if (by_layer.empty())
        throw FormatError("report: attribution.csv has no rows");

    double vmax = 0.0;
    for (const auto& [layer, paths] : by_layer)
        for (const auto& [path, v] : paths) vmax = std::max(vmax, v);
    vmax = nice_ceil(vmax);
    auto ypos = [&](double v) {
        return kPlotBottom - (kPlotBottom - kPlotTop) * v / vmax;
    };

    int n = static_cast<int>(by_layer.size());
    double slot = (kPlotRight - kPlotLeft) / n;
    double bar = slot * 0.32;

    Svg svg("Logit attribution by layer (step " + fmt_tick(max_step) + ")");
    svg.axes();
    for (int i = 0; i <= 5; ++i) {
        double v = vmax * i / 5.0;
        svg.y_tick(ypos(v), fmt_tick(v));
    }
    int idx = 0;
    for (const auto& [layer, paths] : by_layer) {
        double center = kPlotLeft + slot * (idx + 0.5);
        svg.x_tick(center, fmt_tick(layer));
        auto sa = paths.find("sa");
        auto mlp = paths.find("mlp");
        if (sa != paths.end())
            svg.rect(center - bar, ypos(sa->second), bar,
                     kPlotBottom - ypos(sa->second), "#4c78a8");
        if (mlp != paths.end())
            svg.rect(center, ypos(mlp->second), bar,
                     kPlotBottom - ypos(mlp->second), "#f58518");
        ++idx;
    }
    svg.text((kPlotLeft + kPlotRight) / 2.0, kHeight - 12.0, "layer",
             "middle", 13);
    svg.rect(kPlotRight - 150.0, kPlotTop + 6.0, 12.0, 12.0, "#4c78a8");
    svg.text(kPlotRight - 134.0, kPlotTop + 16.0, "SA", "start", 12);
    svg.rect(kPlotRight - 90.0, kPlotTop + 6.0, 12.0, 12.0, "#f58518");
    svg.text(kPlotRight - 74.0, kPlotTop + 16.0, "MLP", "start", 12);
    return svg.finish();
}

void emit_report(const std::string& run_dir) {
    auto write = [&](const std::string& name, const std::string& body) {
        std::string path = run_dir + "/" + name;
        std::ofstream f(path, std::ios::trunc | std::ios::binary);
        if (!f) throw FormatError("report: cannot write " + path);
        f << body;
    };
    write("heldout_vs_stage.svg",
          render_heldout_svg(read_csv(run_dir + "/matrix.csv")));
    write("ntb_vs_step.svg", render_probe_svg(read_csv(run_dir + "/probe.csv")));
    write("attribution_layers.svg",
          render_attribution_svg(read_csv(run_dir + "/attribution.csv")));
}

}  // namespace dlab
