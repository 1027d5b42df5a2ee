#include "dsbp/harness.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "dsbp/analysis.hpp"
#include "dsbp/eigen.hpp"
#include "dsbp/extensions.hpp"
#include "dsbp/hessian.hpp"
#include "dsbp/optimizer.hpp"
#include "dsbp/rng.hpp"

namespace fs = std::filesystem;

namespace dsbp::harness {

namespace {

// ----------------------------------------------------------- tiny utilities

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out << content;
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

std::vector<std::string> read_lines(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

double parse_double_tok(const std::string& tok, const std::string& where) {
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(tok.c_str(), &end);
    if (tok.empty() || errno != 0 || end != tok.c_str() + tok.size()) {
        throw std::runtime_error(where + ": malformed number '" + tok + "'");
    }
    return v;
}

std::int64_t parse_int_tok(const std::string& tok, const std::string& where) {
    char* end = nullptr;
    errno = 0;
    const long long v = std::strtoll(tok.c_str(), &end, 10);
    if (tok.empty() || errno != 0 || end != tok.c_str() + tok.size()) {
        throw std::runtime_error(where + ": malformed integer '" + tok + "'");
    }
    return static_cast<std::int64_t>(v);
}

std::optional<double> parse_opt_tok(const std::string& tok, const std::string& where) {
    if (tok == "NA") return std::nullopt;
    return parse_double_tok(tok, where);
}

std::string opt9(const std::optional<double>& v) { return v ? format_sig9(*v) : "NA"; }

std::string hex64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// ------------------------------------------------------------ metric tables

std::string metrics_header(std::size_t layers) {
    std::string h = "iteration\tepoch\ttrain_loss\ttest_accuracy\thessian_top";
    for (std::size_t l = 0; l < layers; ++l) h += "\tlambda1_l" + std::to_string(l);
    for (std::size_t l = 0; l < layers; ++l) h += "\tlambda1_scaled_l" + std::to_string(l);
    h += "\talignment\tangle_degrees";
    for (std::size_t l = 0; l < layers; ++l) h += "\tsparsity_l" + std::to_string(l);
    return h;
}

// --------------------------------------------------------------- summaries

std::string activation_name(nn::ActivationKind kind) {
    switch (kind) {
        case nn::ActivationKind::relu: return "relu";
        case nn::ActivationKind::identity: return "identity";
        case nn::ActivationKind::softmax_output: return "softmax_output";
    }
    throw std::logic_error("unknown activation kind");
}

nn::ActivationKind activation_from_name(const std::string& name, const std::string& where) {
    if (name == "relu") return nn::ActivationKind::relu;
    if (name == "identity") return nn::ActivationKind::identity;
    if (name == "softmax_output") return nn::ActivationKind::softmax_output;
    throw std::runtime_error(where + ": unknown activation '" + name + "'");
}

double summary_double(const SummaryMap& sm, const std::string& key) {
    return parse_double_tok(summary_value(sm, key), "summary key '" + key + "'");
}

// --------------------------------------------------------------- run pieces

optim::BaselineKind baseline_from_method(const std::string& method) {
    if (method == "sgd") return optim::BaselineKind::sgd;
    if (method == "sam") return optim::BaselineKind::sam;
    if (method == "dsbp") return optim::BaselineKind::dsbp;
    if (method == "lie") return optim::BaselineKind::lie;
    throw ConfigError("config: [optimizer] method '" + method + "' is not supported");
}

std::size_t epoch_length(std::size_t samples, std::size_t batch_size) {
    return std::max<std::size_t>(1, (samples + batch_size - 1) / batch_size);
}

optim::DsbpConfig to_optim_config(const ExperimentConfig& cfg, std::size_t epoch_len) {
    const auto& o = cfg.optimizer;
    optim::DsbpConfig out;
    out.eta = o.eta;
    out.k = o.k;
    out.p0 = o.p0;
    out.tau0 = o.tau0;
    out.beta = o.beta;
    out.alpha = o.alpha;
    out.total_iters = o.total_iters > 0 ? o.total_iters : o.epochs * epoch_len;
    out.power_iters = o.power_iters;
    out.seed = cfg.seed;
    out.baseline_kind = baseline_from_method(o.method);
    out.batch_size = o.batch_size;
    out.prune = o.prune;
    out.sam_rho = o.sam_rho;
    out.hessian_every = cfg.metrics.hessian_every;
    out.test_every = cfg.metrics.test_every > 0 ? cfg.metrics.test_every : epoch_len;
    return out;
}

data::Dataset take_rows(const data::Dataset& ds, const std::vector<std::size_t>& rows) {
    data::Dataset out;
    out.class_count = ds.class_count;
    out.features = linalg::DenseMatrix(rows.size(), ds.features.cols);
    out.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = ds.features.row(rows[i]);
        std::copy(src.begin(), src.end(), out.features.row(i).begin());
        out.labels.push_back(ds.labels[rows[i]]);
    }
    return out;
}

nn::Batch probe_batch(const data::Dataset& ds, std::size_t cap) {
    std::vector<std::size_t> idx(std::min(cap, ds.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return data::make_batch(ds, idx);
}

nn::ForwardResult evaluate_full(const nn::Network& net, const data::Dataset& ds) {
    std::vector<std::size_t> idx(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const nn::Batch batch = data::make_batch(ds, idx);
    nn::Network copy = net;
    return copy.forward(batch);
}

void check_model_matches_data(const ExperimentConfig& cfg, const data::Dataset& train) {
    const auto& layers = cfg.model.layers;
    if (layers.front() != train.features.cols) {
        throw ConfigError("config: [model] layers input width " + std::to_string(layers.front()) +
                          " does not match the dataset feature width " +
                          std::to_string(train.features.cols));
    }
    if (layers.back() != static_cast<std::size_t>(train.class_count)) {
        throw ConfigError("config: [model] layers output width " + std::to_string(layers.back()) +
                          " does not match the dataset class count " +
                          std::to_string(train.class_count));
    }
}

void snapshot_config(const ExperimentConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_text_file(out_dir + "/config.snapshot", serialize_config(cfg));
}

void write_refresh_events(const std::vector<optim::RefreshEvent>& events,
                          const std::string& path) {
    std::string out = "iteration\tlayer\tlambda1\tnext_interval\n";
    for (const auto& e : events) {
        out += std::to_string(e.iteration) + "\t" + std::to_string(e.layer) + "\t" +
               format_exact(e.lambda1) + "\t" + std::to_string(e.next_interval) + "\n";
    }
    write_text_file(path, out);
}

void write_prune_events(const std::vector<optim::PruneEvent>& events, const std::string& path) {
    std::string out =
        "iteration\tlayer\tthreshold\tcandidate_sparsity\treconstruction_error\tbudget\t"
        "committed\n";
    for (const auto& e : events) {
        out += std::to_string(e.iteration) + "\t" + std::to_string(e.layer) + "\t" +
               format_exact(e.threshold) + "\t" + format_exact(e.candidate_sparsity) + "\t" +
               format_exact(e.reconstruction_error) + "\t" + format_exact(e.budget) + "\t" +
               (e.committed ? "true" : "false") + "\n";
    }
    write_text_file(path, out);
}

struct PruneEventRow {
    std::size_t iteration = 0;
    std::size_t layer = 0;
    double threshold = 0.0;
    double candidate_sparsity = 0.0;
    double reconstruction_error = 0.0;
    double budget = 0.0;
    bool committed = false;
};

std::vector<PruneEventRow> read_prune_events(const std::string& path) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw std::runtime_error("prune events: empty file " + path);
    std::vector<PruneEventRow> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto toks = split_tabs(lines[i]);
        if (toks.size() != 7) {
            throw std::runtime_error("prune events: row " + std::to_string(i + 1) + " of " + path +
                                     " has " + std::to_string(toks.size()) + " columns, expected 7");
        }
        const std::string where = "prune events row " + std::to_string(i + 1);
        PruneEventRow row;
        row.iteration = static_cast<std::size_t>(parse_int_tok(toks[0], where));
        row.layer = static_cast<std::size_t>(parse_int_tok(toks[1], where));
        row.threshold = parse_double_tok(toks[2], where);
        row.candidate_sparsity = parse_double_tok(toks[3], where);
        row.reconstruction_error = parse_double_tok(toks[4], where);
        row.budget = parse_double_tok(toks[5], where);
        if (toks[6] == "true") row.committed = true;
        else if (toks[6] == "false") row.committed = false;
        else throw std::runtime_error(where + ": malformed boolean '" + toks[6] + "'");
        out.push_back(row);
    }
    return out;
}

// ------------------------------------------------------------------ figures

// must mirror the slice lattice: offsets span * (2i/(g-1) - 1), 0 for g == 1
double lattice_offset(std::size_t i, std::size_t grid, double span) {
    if (grid == 1) return 0.0;
    return span * ((2.0 * static_cast<double>(i)) / static_cast<double>(grid - 1) - 1.0);
}

struct FigurePoint {
    double x = 0.0;
    double y = 0.0;
};

std::string svg_label(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::string svg_coord(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

// One self-contained chart: axes box, min/max labels, a title, and either a
// polyline through the points or one dot per point.
std::string render_svg_chart(const std::string& title, const std::vector<FigurePoint>& pts,
                             bool lines) {
    const double x0 = 60.0, y0 = 20.0, x1 = 620.0, y1 = 440.0;
    double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
    if (!pts.empty()) {
        xmin = xmax = pts[0].x;
        ymin = ymax = pts[0].y;
        for (const auto& p : pts) {
            xmin = std::min(xmin, p.x);
            xmax = std::max(xmax, p.x);
            ymin = std::min(ymin, p.y);
            ymax = std::max(ymax, p.y);
        }
    }
    if (xmax == xmin) { xmin -= 0.5; xmax += 0.5; }
    if (ymax == ymin) { ymin -= 0.5; ymax += 0.5; }
    const auto sx = [&](double x) { return x0 + (x - xmin) / (xmax - xmin) * (x1 - x0); };
    const auto sy = [&](double y) { return y1 - (y - ymin) / (ymax - ymin) * (y1 - y0); };

    std::string svg =
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
        "viewBox=\"0 0 640 480\">\n";
    svg += "<rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"white\"/>\n";
    svg += "<rect x=\"" + svg_coord(x0) + "\" y=\"" + svg_coord(y0) + "\" width=\"" +
           svg_coord(x1 - x0) + "\" height=\"" + svg_coord(y1 - y0) +
           "\" fill=\"none\" stroke=\"black\"/>\n";
    svg += "<text x=\"320\" y=\"14\" text-anchor=\"middle\" font-size=\"13\">" + title +
           "</text>\n";
    svg += "<text x=\"" + svg_coord(x0) + "\" y=\"458\" font-size=\"11\">" + svg_label(xmin) +
           "</text>\n";
    svg += "<text x=\"" + svg_coord(x1) + "\" y=\"458\" text-anchor=\"end\" font-size=\"11\">" +
           svg_label(xmax) + "</text>\n";
    svg += "<text x=\"54\" y=\"" + svg_coord(y1) + "\" text-anchor=\"end\" font-size=\"11\">" +
           svg_label(ymin) + "</text>\n";
    svg += "<text x=\"54\" y=\"" + svg_coord(y0 + 4.0) +
           "\" text-anchor=\"end\" font-size=\"11\">" + svg_label(ymax) + "</text>\n";
    if (lines && pts.size() > 1) {
        svg += "<polyline fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (i) svg += ' ';
            svg += svg_coord(sx(pts[i].x)) + "," + svg_coord(sy(pts[i].y));
        }
        svg += "\"/>\n";
    }
    for (const auto& p : pts) {
        svg += "<circle cx=\"" + svg_coord(sx(p.x)) + "\" cy=\"" + svg_coord(sy(p.y)) +
               "\" r=\"2.5\" fill=\"#1f5fa8\"/>\n";
    }
    svg += "</svg>\n";
    return svg;
}

std::string render_svg_heatmap(const std::string& title, const linalg::DenseMatrix& grid,
                               double span) {
    const double x0 = 60.0, y0 = 20.0, x1 = 620.0, y1 = 440.0;
    double vmin = grid(0, 0), vmax = grid(0, 0);
    for (std::size_t i = 0; i < grid.rows; ++i) {
        for (std::size_t j = 0; j < grid.cols; ++j) {
            vmin = std::min(vmin, grid(i, j));
            vmax = std::max(vmax, grid(i, j));
        }
    }
    const double range = vmax > vmin ? vmax - vmin : 1.0;
    const double cw = (x1 - x0) / static_cast<double>(grid.cols);
    const double ch = (y1 - y0) / static_cast<double>(grid.rows);

    std::string svg =
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
        "viewBox=\"0 0 640 480\">\n";
    svg += "<rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"white\"/>\n";
    svg += "<text x=\"320\" y=\"14\" text-anchor=\"middle\" font-size=\"13\">" + title +
           "</text>\n";
    for (std::size_t i = 0; i < grid.rows; ++i) {
        for (std::size_t j = 0; j < grid.cols; ++j) {
            const double t = (grid(i, j) - vmin) / range;  // 0 = light, 1 = dark
            const int shade = static_cast<int>(std::lround(255.0 * (1.0 - t)));
            svg += "<rect x=\"" + svg_coord(x0 + static_cast<double>(j) * cw) + "\" y=\"" +
                   svg_coord(y0 + static_cast<double>(i) * ch) + "\" width=\"" +
                   svg_coord(cw + 0.5) + "\" height=\"" + svg_coord(ch + 0.5) +
                   "\" fill=\"rgb(" + std::to_string(shade) + "," + std::to_string(shade) + "," +
                   std::to_string(shade) + ")\"/>\n";
        }
    }
    svg += "<rect x=\"" + svg_coord(x0) + "\" y=\"" + svg_coord(y0) + "\" width=\"" +
           svg_coord(x1 - x0) + "\" height=\"" + svg_coord(y1 - y0) +
           "\" fill=\"none\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + svg_coord(x0) + "\" y=\"458\" font-size=\"11\">a,b in [-" +
           svg_label(span) + ", " + svg_label(span) + "], loss in [" + svg_label(vmin) + ", " +
           svg_label(vmax) + "]</text>\n";
    svg += "</svg>\n";
    return svg;
}

}  // namespace

// ------------------------------------------------------------ public pieces

std::string format_sig9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void emit_metrics(const std::vector<MetricsRecord>& records, const std::string& path) {
    const std::size_t layers = records.empty() ? 0 : records[0].lambda_top.size();
    std::string out = metrics_header(layers) + "\n";
    for (const auto& r : records) {
        out += std::to_string(r.iteration) + "\t" + std::to_string(r.epoch) + "\t" +
               format_sig9(r.train_loss) + "\t" + opt9(r.test_accuracy) + "\t" +
               opt9(r.hessian_top);
        for (const auto& v : r.lambda_top) out += "\t" + opt9(v);
        for (const auto& v : r.lambda_top_scaled) out += "\t" + opt9(v);
        out += "\t" + opt9(r.alignment) + "\t" + opt9(r.angle_degrees);
        for (double s : r.sparsity) out += "\t" + format_sig9(s);
        out += "\n";
    }
    write_text_file(path, out);
}

std::vector<MetricsRecord> read_metrics(const std::string& path) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw std::runtime_error("metrics: empty file " + path);

    const auto header = split_tabs(lines[0]);
    std::size_t layers = 0;
    for (const auto& name : header) {
        if (name.rfind("lambda1_l", 0) == 0 && name.rfind("lambda1_scaled_l", 0) != 0) ++layers;
    }
    if (lines[0] != metrics_header(layers)) {
        throw std::runtime_error("metrics: unexpected header in " + path);
    }

    std::vector<MetricsRecord> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto toks = split_tabs(lines[i]);
        const std::size_t expected = 7 + 3 * layers;
        if (toks.size() != expected) {
            throw std::runtime_error("metrics: row " + std::to_string(i + 1) + " of " + path +
                                     " has " + std::to_string(toks.size()) + " columns, expected " +
                                     std::to_string(expected));
        }
        const std::string where = "metrics row " + std::to_string(i + 1);
        MetricsRecord r;
        std::size_t c = 0;
        r.iteration = parse_int_tok(toks[c++], where);
        r.epoch = parse_int_tok(toks[c++], where);
        r.train_loss = parse_double_tok(toks[c++], where);
        r.test_accuracy = parse_opt_tok(toks[c++], where);
        r.hessian_top = parse_opt_tok(toks[c++], where);
        r.lambda_top.resize(layers);
        for (std::size_t l = 0; l < layers; ++l) r.lambda_top[l] = parse_opt_tok(toks[c++], where);
        r.lambda_top_scaled.resize(layers);
        for (std::size_t l = 0; l < layers; ++l) {
            r.lambda_top_scaled[l] = parse_opt_tok(toks[c++], where);
        }
        r.alignment = parse_opt_tok(toks[c++], where);
        r.angle_degrees = parse_opt_tok(toks[c++], where);
        r.sparsity.resize(layers);
        for (std::size_t l = 0; l < layers; ++l) r.sparsity[l] = parse_double_tok(toks[c++], where);
        out.push_back(std::move(r));
    }
    return out;
}

void emit_timing(const std::vector<MetricsRecord>& records,
                 const std::vector<double>& epoch_wall_ms, const std::string& path) {
    std::string out = "kind\tindex\twall_ms\n";
    for (const auto& r : records) {
        out += "iter\t" + std::to_string(r.iteration) + "\t" + opt9(r.wall_clock_ms) + "\n";
    }
    for (std::size_t e = 0; e < epoch_wall_ms.size(); ++e) {
        out += "epoch\t" + std::to_string(e) + "\t" + format_sig9(epoch_wall_ms[e]) + "\n";
    }
    write_text_file(path, out);
}

void save_network(const nn::Network& net, const std::string& path) {
    std::string out = "dsbp-network 1\n";
    out += "layers " + std::to_string(net.layer_count()) + "\n";
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        const auto& layer = net.layer(l);
        out += "layer " + std::to_string(layer.weight.rows) + " " +
               std::to_string(layer.weight.cols) + " " + activation_name(layer.activation) + "\n";
        for (std::size_t i = 0; i < layer.weight.rows; ++i) {
            const auto row = layer.weight.row(i);
            for (std::size_t j = 0; j < row.size(); ++j) {
                if (j) out += ' ';
                out += format_exact(row[j]);
            }
            out += "\n";
        }
        out += "bias";
        for (double b : layer.bias) out += " " + format_exact(b);
        out += "\n";
    }
    write_text_file(path, out);
}

nn::Network load_network(const std::string& path) {
    std::istringstream in(read_text_file(path));
    const std::string where = "network file " + path;
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != "dsbp-network" || version != 1) {
        throw std::runtime_error(where + ": bad header");
    }
    std::string word;
    std::size_t count = 0;
    if (!(in >> word >> count) || word != "layers") {
        throw std::runtime_error(where + ": missing layer count");
    }
    std::vector<nn::DenseLayer> layers;
    layers.reserve(count);
    for (std::size_t l = 0; l < count; ++l) {
        std::size_t rows = 0, cols = 0;
        std::string act;
        if (!(in >> word >> rows >> cols >> act) || word != "layer") {
            throw std::runtime_error(where + ": malformed layer " + std::to_string(l));
        }
        nn::DenseLayer layer;
        layer.activation = activation_from_name(act, where);
        layer.weight = linalg::DenseMatrix(rows, cols);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
                if (!(in >> layer.weight(i, j))) {
                    throw std::runtime_error(where + ": truncated weights in layer " +
                                             std::to_string(l));
                }
            }
        }
        layer.bias.resize(rows);
        if (!(in >> word) || word != "bias") {
            throw std::runtime_error(where + ": missing bias row in layer " + std::to_string(l));
        }
        for (std::size_t i = 0; i < rows; ++i) {
            if (!(in >> layer.bias[i])) {
                throw std::runtime_error(where + ": truncated bias in layer " + std::to_string(l));
            }
        }
        layers.push_back(std::move(layer));
    }
    return nn::Network(std::move(layers));
}

void write_summary(const SummaryMap& entries, const std::string& path) {
    std::string out = "[summary]\n";
    for (const auto& [key, value] : entries) out += key + " = " + value + "\n";
    write_text_file(path, out);
}

SummaryMap read_summary(const std::string& path) {
    SummaryMap out;
    for (const auto& raw : read_lines(path)) {
        std::string line = raw;
        // light trim; summary files are machine-written
        while (!line.empty() && (line.back() == ' ' || line.back() == '\t')) line.pop_back();
        std::size_t start = 0;
        while (start < line.size() && (line[start] == ' ' || line[start] == '\t')) ++start;
        line = line.substr(start);
        if (line.empty() || line[0] == '#' || line[0] == '[') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("summary: malformed line '" + line + "' in " + path);
        }
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        while (!key.empty() && key.back() == ' ') key.pop_back();
        while (!value.empty() && value.front() == ' ') value.erase(value.begin());
        out.emplace_back(std::move(key), std::move(value));
    }
    return out;
}

const std::string& summary_value(const SummaryMap& summary, const std::string& key) {
    for (const auto& [k, v] : summary) {
        if (k == key) return v;
    }
    throw std::runtime_error("summary: missing key '" + key + "'");
}

DataSplit build_datasets(const DataConfig& d, std::uint64_t run_seed) {
    const std::uint64_t seed = d.seed != 0 ? d.seed : run_seed;
    DataSplit split;
    if (d.kind == "blobs") {
        const data::Dataset full = data::gaussian_blobs(
            seed, d.per_class + d.test_per_class, d.dims, static_cast<int>(d.classes),
            d.separation);
        std::vector<std::size_t> train_rows, test_rows;
        std::vector<std::size_t> taken(d.classes, 0);
        for (std::size_t i = 0; i < full.size(); ++i) {
            const auto label = static_cast<std::size_t>(full.labels[i]);
            if (taken[label] < d.per_class) {
                ++taken[label];
                train_rows.push_back(i);
            } else {
                test_rows.push_back(i);
            }
        }
        split.train = take_rows(full, train_rows);
        split.test = take_rows(full, test_rows);
    } else if (d.kind == "digits") {
        const data::Dataset full = data::render_digits(seed, d.count + d.test_count);
        std::vector<std::size_t> train_rows(d.count), test_rows(d.test_count);
        for (std::size_t i = 0; i < d.count; ++i) train_rows[i] = i;
        for (std::size_t i = 0; i < d.test_count; ++i) test_rows[i] = d.count + i;
        split.train = take_rows(full, train_rows);
        split.test = take_rows(full, test_rows);
    } else if (d.kind == "idx") {
        split.train = data::load_idx(d.train_images, d.train_labels);
        if (!d.test_images.empty()) {
            split.test = data::load_idx(d.test_images, d.test_labels);
        } else {
            split.test.class_count = split.train.class_count;
            split.test.features = linalg::DenseMatrix(0, split.train.features.cols);
        }
    } else {
        throw ConfigError("config: [data] kind '" + d.kind + "' must be one of blobs|digits|idx");
    }
    return split;
}

nn::Network build_network(const ModelConfig& m, std::uint64_t seed) {
    nn::Network net = nn::Network::mlp(m.layers, seed);
    if (m.hidden == "identity") {
        for (std::size_t l = 0; l + 1 < net.layer_count(); ++l) {
            net.layer(l).activation = nn::ActivationKind::identity;
        }
    }
    return net;
}

// ------------------------------------------------------------------- trains

void run_train(const ExperimentConfig& cfg, const std::string& out_dir) {
    snapshot_config(cfg, out_dir);
    DataSplit split = build_datasets(cfg.data, cfg.seed);
    check_model_matches_data(cfg, split.train);

    nn::Network net = build_network(cfg.model, cfg.seed);
    const std::size_t epoch_len = epoch_length(split.train.size(), cfg.optimizer.batch_size);
    const optim::DsbpConfig ocfg = to_optim_config(cfg, epoch_len);

    data::EpochShuffleSource source(split.train, cfg.seed);
    const data::Dataset* test = split.test.size() > 0 ? &split.test : nullptr;
    optim::TrainReport report = optim::train(std::move(net), source, ocfg, test);

    emit_metrics(report.records, out_dir + "/metrics.tsv");
    emit_timing(report.records, report.epoch_wall_ms, out_dir + "/timing.tsv");
    write_refresh_events(report.refresh_events, out_dir + "/refresh_events.tsv");
    write_prune_events(report.prune_events, out_dir + "/prune_events.tsv");
    save_network(report.final_net, out_dir + "/model.txt");

    // final-state probes (capped batch keeps the Hessian estimates affordable)
    nn::Network final_net = report.final_net;
    const nn::Batch probe = probe_batch(split.train, 256);
    const std::size_t layers = final_net.layer_count();

    std::vector<double> hessian_layer(layers, 0.0);
    double sum_top = 0.0;
    for (std::size_t l = 0; l < layers; ++l) {
        hessian_layer[l] =
            nn::layer_hessian_eigenvalue(final_net, probe, l, 30, mix_seed(cfg.seed, 9100 + l))
                .value;
        sum_top += hessian_layer[l];
    }
    const double hessian_top =
        nn::top_hessian_eigenvalue(final_net, probe, 30, mix_seed(cfg.seed, 9001)).value;

    std::vector<double> lambda1(layers, 0.0);
    final_net.forward(probe);
    for (std::size_t l = 0; l < layers; ++l) {
        const auto cov = linalg::activation_covariance(final_net.activation(l + 1));
        lambda1[l] = linalg::power_iteration_topk(cov, 1, 100, mix_seed(cfg.seed, 9200 + l))
                         .values[0];
    }

    const std::vector<double> theta = final_net.parameter_vector();
    double norm_sq = 0.0;
    for (double t : theta) norm_sq += t * t;

    const auto& last = report.records.back();
    SummaryMap sm;
    sm.emplace_back("name", cfg.run_name);
    sm.emplace_back("seed", std::to_string(cfg.seed));
    sm.emplace_back("method", cfg.optimizer.method);
    sm.emplace_back("iterations", std::to_string(ocfg.total_iters));
    sm.emplace_back("epochs", std::to_string(last.epoch + 1));
    sm.emplace_back("batch_size", std::to_string(ocfg.batch_size));
    sm.emplace_back("samples", std::to_string(split.train.size()));
    sm.emplace_back("test_samples", std::to_string(split.test.size()));
    sm.emplace_back("parameters", std::to_string(final_net.parameter_count()));
    sm.emplace_back("final_train_loss", format_exact(last.train_loss));
    if (test != nullptr) {
        const nn::ForwardResult on_test = evaluate_full(final_net, split.test);
        sm.emplace_back("final_test_accuracy", format_exact(on_test.accuracy));
        sm.emplace_back("final_test_loss", format_exact(on_test.loss));
    } else {
        sm.emplace_back("final_test_accuracy", "NA");
        sm.emplace_back("final_test_loss", "NA");
    }
    sm.emplace_back("weight_norm", format_exact(std::sqrt(norm_sq)));
    sm.emplace_back("hessian_top", format_exact(hessian_top));
    sm.emplace_back("sum_top_eigs", format_exact(sum_top));
    for (std::size_t l = 0; l < layers; ++l) {
        sm.emplace_back("hessian_layer_" + std::to_string(l), format_exact(hessian_layer[l]));
    }
    for (std::size_t l = 0; l < layers; ++l) {
        sm.emplace_back("lambda1_layer_" + std::to_string(l), format_exact(lambda1[l]));
    }
    for (std::size_t l = 0; l < layers; ++l) {
        sm.emplace_back("sparsity_layer_" + std::to_string(l), format_exact(last.sparsity[l]));
    }
    write_summary(sm, out_dir + "/summary.txt");
}

void run_meta(const ExperimentConfig& cfg, const std::string& out_dir) {
    snapshot_config(cfg, out_dir);
    DataSplit split = build_datasets(cfg.data, cfg.seed);
    const auto& me = cfg.meta;
    if (cfg.model.layers.back() != me.n_way) {
        throw ConfigError("config: [model] layers output width " +
                          std::to_string(cfg.model.layers.back()) + " must equal [meta] n_way " +
                          std::to_string(me.n_way));
    }
    if (cfg.model.layers.front() != split.train.features.cols) {
        throw ConfigError("config: [model] layers input width " +
                          std::to_string(cfg.model.layers.front()) +
                          " does not match the dataset feature width " +
                          std::to_string(split.train.features.cols));
    }

    ext::MetaConfig mc;
    mc.inner.eta = cfg.optimizer.eta;
    mc.inner.k = cfg.optimizer.k;
    mc.inner.p0 = cfg.optimizer.p0;
    mc.inner.tau0 = cfg.optimizer.tau0;
    mc.inner.beta = cfg.optimizer.beta;
    mc.inner.alpha = cfg.optimizer.alpha;
    mc.inner.power_iters = cfg.optimizer.power_iters;
    mc.inner.seed = cfg.seed;
    mc.inner.total_iters = me.inner_steps;
    mc.inner_steps = me.inner_steps;
    mc.outer_steps = me.outer_steps;
    mc.outer_step = me.outer_step;
    mc.buffer_k = me.buffer_k;
    mc.hessian_every = me.hessian_every;

    data::FewshotSampler sampler(split.train, me.n_way, me.k_shot, me.query_per_class,
                                 mix_seed(cfg.seed, 5001));
    nn::Network net = build_network(cfg.model, cfg.seed);
    ext::MetaReport report = ext::meta_train([&sampler]() { return sampler.next(); },
                                             std::move(net), mc);

    std::string table = "outer_step\tquery_accuracy\tquery_loss\tsimilarity\thessian_top\n";
    for (const auto& ep : report.episodes) {
        table += std::to_string(ep.outer_step) + "\t" + format_sig9(ep.query_accuracy) + "\t" +
                 format_sig9(ep.query_loss) + "\t" + format_sig9(ep.similarity) + "\t" +
                 opt9(ep.hessian_top) + "\n";
    }
    write_text_file(out_dir + "/meta_metrics.tsv", table);
    save_network(report.meta_net, out_dir + "/model.txt");

    SummaryMap sm;
    sm.emplace_back("name", cfg.run_name);
    sm.emplace_back("seed", std::to_string(cfg.seed));
    sm.emplace_back("episodes", std::to_string(report.episodes.size()));
    const std::size_t tail = std::min<std::size_t>(10, report.episodes.size());
    double tail_acc = 0.0;
    for (std::size_t i = report.episodes.size() - tail; i < report.episodes.size(); ++i) {
        tail_acc += report.episodes[i].query_accuracy;
    }
    sm.emplace_back("query_accuracy_last10",
                    format_exact(tail > 0 ? tail_acc / static_cast<double>(tail) : 0.0));

    if (me.eval_episodes > 0) {
        data::FewshotSampler eval_sampler(split.train, me.n_way, me.k_shot, me.query_per_class,
                                          mix_seed(cfg.seed, 5002));
        const nn::Network scratch = build_network(cfg.model, mix_seed(cfg.seed, 6000));
        std::string eval_table = "episode\tmeta_accuracy\tscratch_accuracy\tdiff\n";
        std::vector<double> diffs;
        double meta_sum = 0.0, scratch_sum = 0.0;
        for (std::size_t e = 0; e < me.eval_episodes; ++e) {
            const data::FewshotTask task = eval_sampler.next();
            const auto meta_res = ext::meta_adapt(report.meta_net, task, mc, 100000 + e);
            const auto scratch_res = ext::meta_adapt(scratch, task, mc, 100000 + e);
            const double diff = meta_res.query_accuracy - scratch_res.query_accuracy;
            diffs.push_back(diff);
            meta_sum += meta_res.query_accuracy;
            scratch_sum += scratch_res.query_accuracy;
            eval_table += std::to_string(e) + "\t" + format_sig9(meta_res.query_accuracy) + "\t" +
                          format_sig9(scratch_res.query_accuracy) + "\t" + format_sig9(diff) + "\n";
        }
        write_text_file(out_dir + "/meta_eval.tsv", eval_table);

        // percentile bootstrap over the paired differences
        const std::size_t n = diffs.size();
        const std::size_t resamples = 2000;
        Rng rng = Rng::stream(mix_seed(cfg.seed, 6001), "bootstrap");
        std::vector<double> means(resamples);
        for (std::size_t b = 0; b < resamples; ++b) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                auto idx = static_cast<std::size_t>(rng.uniform() * static_cast<double>(n));
                if (idx >= n) idx = n - 1;
                acc += diffs[idx];
            }
            means[b] = acc / static_cast<double>(n);
        }
        std::sort(means.begin(), means.end());
        const double lo = means[static_cast<std::size_t>(0.025 * resamples)];
        const double hi = means[static_cast<std::size_t>(0.975 * resamples)];
        double mean_diff = 0.0;
        for (double d : diffs) mean_diff += d;
        mean_diff /= static_cast<double>(n);

        sm.emplace_back("eval_episodes", std::to_string(n));
        sm.emplace_back("meta_mean_accuracy", format_exact(meta_sum / static_cast<double>(n)));
        sm.emplace_back("scratch_mean_accuracy",
                        format_exact(scratch_sum / static_cast<double>(n)));
        sm.emplace_back("mean_diff", format_exact(mean_diff));
        sm.emplace_back("diff_ci_low", format_exact(lo));
        sm.emplace_back("diff_ci_high", format_exact(hi));
    }
    write_summary(sm, out_dir + "/summary.txt");
}

void run_sde(const ExperimentConfig& cfg, const std::string& out_dir) {
    snapshot_config(cfg, out_dir);
    DataSplit split = build_datasets(cfg.data, cfg.seed);
    check_model_matches_data(cfg, split.train);
    nn::Network net = build_network(cfg.model, cfg.seed);

    const auto& s = cfg.sde;
    analysis::SdeConfig sc;
    sc.eta = s.eta;
    sc.horizon = s.horizon;
    sc.steps = s.steps;
    sc.noise_seed = cfg.seed;
    sc.diffusion_mode =
        s.diffusion == "zero" ? analysis::SdeDiffusion::zero : analysis::SdeDiffusion::diagonal;

    const optim::DsbpConfig ocfg = to_optim_config(cfg, 1);
    const analysis::SdeTrajectory traj = analysis::sde_simulate(std::move(net), split.train, sc,
                                                                ocfg);

    std::string table = "step\ttime\tloss\tstate_hash\n";
    for (std::size_t i = 0; i < traj.points.size(); ++i) {
        table += std::to_string(i) + "\t" + format_sig9(traj.points[i].time) + "\t" +
                 format_sig9(traj.points[i].loss) + "\t" + hex64(traj.points[i].state_hash) + "\n";
    }
    write_text_file(out_dir + "/sde_path.tsv", table);

    SummaryMap sm;
    sm.emplace_back("name", cfg.run_name);
    sm.emplace_back("seed", std::to_string(cfg.seed));
    sm.emplace_back("steps", std::to_string(s.steps));
    sm.emplace_back("horizon", format_exact(s.horizon));
    sm.emplace_back("initial_loss", format_exact(traj.points.front().loss));
    sm.emplace_back("final_loss", format_exact(traj.points.back().loss));

    if (!s.weak_etas.empty()) {
        analysis::QuadraticToy toy;
        toy.curvature = s.weak_curvature;
        toy.noise_scale = s.weak_noise;
        toy.start = s.weak_start;
        toy.horizon = s.weak_horizon;
        const auto points = analysis::weak_error_vs_eta(toy, s.weak_etas, s.weak_seeds, cfg.seed);
        std::string weak = "eta\terror\tstd_error\tratio_to_next\n";
        for (std::size_t i = 0; i < points.size(); ++i) {
            weak += format_sig9(points[i].eta) + "\t" + format_sig9(points[i].error) + "\t" +
                    format_sig9(points[i].std_error) + "\t";
            if (i + 1 < points.size() && points[i + 1].error != 0.0) {
                weak += format_sig9(points[i].error / points[i + 1].error);
            } else {
                weak += "NA";
            }
            weak += "\n";
        }
        write_text_file(out_dir + "/weak_order.tsv", weak);
        sm.emplace_back("weak_seeds", std::to_string(s.weak_seeds));
        if (points.size() >= 2 && points[1].error != 0.0) {
            sm.emplace_back("weak_ratio_first", format_exact(points[0].error / points[1].error));
        }
    }
    write_summary(sm, out_dir + "/summary.txt");
}

void run_bound(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream& echo) {
    snapshot_config(cfg, out_dir);
    const auto& b = cfg.bound;
    if (b.summary.empty()) {
        throw ConfigError("config: [bound] summary must point at a trained run's summary file");
    }
    if (!fs::exists(b.summary)) {
        throw ConfigError("config: [bound] summary file not found: " + b.summary);
    }
    const SummaryMap sm = read_summary(b.summary);

    analysis::BoundInputs base;
    base.empirical_loss = summary_double(sm, "final_train_loss");
    base.dim = static_cast<std::size_t>(summary_double(sm, "parameters"));
    base.sum_top_eigs = summary_double(sm, "sum_top_eigs");
    base.loss_bound = b.loss_bound;
    base.sample_count = static_cast<std::size_t>(summary_double(sm, "samples"));
    base.confidence = b.confidence;
    base.weight_norm = summary_double(sm, "weight_norm");

    std::string table = "sigma\tthird_deriv\tempirical\tsharpness\tthird_order\tcomplexity\ttotal\n";
    for (double sigma : b.sigma) {
        for (double third : b.third_deriv) {
            analysis::BoundInputs in = base;
            in.sigma = sigma;
            in.third_deriv_bound = third;
            const analysis::BoundTerms t = analysis::pac_bayes_bound(in);
            echo << "sigma = " << format_exact(sigma) << ", third_deriv = " << format_exact(third)
                 << "\n";
            echo << "  empirical   = " << format_exact(t.empirical) << "\n";
            echo << "  sharpness   = " << format_exact(t.sharpness) << "\n";
            echo << "  third_order = " << format_exact(t.third_order) << "\n";
            echo << "  complexity  = " << format_exact(t.complexity) << "\n";
            echo << "  total       = " << format_exact(t.total) << "\n";
            table += format_exact(sigma) + "\t" + format_exact(third) + "\t" +
                     format_exact(t.empirical) + "\t" + format_exact(t.sharpness) + "\t" +
                     format_exact(t.third_order) + "\t" + format_exact(t.complexity) + "\t" +
                     format_exact(t.total) + "\n";
        }
    }
    write_text_file(out_dir + "/bound.tsv", table);
}

void run_plot_data(const std::string& run_dir, const std::string& out_dir) {
    for (const char* needed : {"config.snapshot", "metrics.tsv", "model.txt"}) {
        if (!fs::exists(run_dir + "/" + needed)) {
            throw std::runtime_error("plot-data: missing " + run_dir + "/" + needed +
                                     " (expected a finished training run)");
        }
    }
    const ExperimentConfig cfg = parse_config_file(run_dir + "/config.snapshot");
    const std::vector<MetricsRecord> records = read_metrics(run_dir + "/metrics.tsv");
    if (records.empty()) throw std::runtime_error("plot-data: metrics.tsv has no rows");
    fs::create_directories(out_dir);
    const std::size_t layers = records[0].lambda_top.size();

    // alignment per epoch: one row per logged epoch, averaging present values
    std::string alignment = "method\tepoch\tmean_alignment\n";
    std::vector<FigurePoint> alignment_pts;
    {
        std::vector<std::int64_t> epochs;
        for (const auto& r : records) {
            if (epochs.empty() || epochs.back() != r.epoch) epochs.push_back(r.epoch);
        }
        for (std::int64_t e : epochs) {
            double sum = 0.0;
            std::size_t n = 0;
            for (const auto& r : records) {
                if (r.epoch == e && r.alignment) {
                    sum += *r.alignment;
                    ++n;
                }
            }
            alignment += cfg.optimizer.method + "\t" + std::to_string(e) + "\t";
            if (n > 0) {
                const double mean = sum / static_cast<double>(n);
                alignment += format_sig9(mean);
                alignment_pts.push_back({static_cast<double>(e), mean});
            } else {
                alignment += "NA";
            }
            alignment += "\n";
        }
    }
    write_text_file(out_dir + "/fig_alignment.tsv", alignment);

    std::string hessian = "epoch\titeration\thessian_top\n";
    std::vector<FigurePoint> hessian_pts;
    for (const auto& r : records) {
        if (!r.hessian_top) continue;
        hessian += std::to_string(r.epoch) + "\t" + std::to_string(r.iteration) + "\t" +
                   format_sig9(*r.hessian_top) + "\n";
        hessian_pts.push_back({static_cast<double>(r.iteration), *r.hessian_top});
    }
    write_text_file(out_dir + "/fig_hessian.tsv", hessian);

    // per-layer sliding-window variance of the logged top eigenvalues
    std::string variance = "layer\tvariance\tsamples\n";
    std::vector<FigurePoint> variance_pts;
    for (std::size_t l = 0; l < layers; ++l) {
        std::vector<double> history;
        for (const auto& r : records) {
            if (r.lambda_top[l]) history.push_back(*r.lambda_top[l]);
        }
        variance += std::to_string(l) + "\t";
        if (history.size() >= 2) {
            const double var = analysis::spectral_variance_per_layer({history})[0];
            variance += format_sig9(var);
            variance_pts.push_back({static_cast<double>(l), var});
        } else {
            variance += "NA";
        }
        variance += "\t" + std::to_string(history.size()) + "\n";
    }
    write_text_file(out_dir + "/fig_eig_variance.tsv", variance);

    std::string angles = "epoch\titeration\tangle_degrees\n";
    std::vector<FigurePoint> angle_pts;
    for (const auto& r : records) {
        if (!r.angle_degrees) continue;
        angles += std::to_string(r.epoch) + "\t" + std::to_string(r.iteration) + "\t" +
                  format_sig9(*r.angle_degrees) + "\n";
        angle_pts.push_back({static_cast<double>(r.iteration), *r.angle_degrees});
    }
    write_text_file(out_dir + "/fig_angles.tsv", angles);

    // landscape slice around the saved final weights
    nn::Network net = load_network(run_dir + "/model.txt");
    const DataSplit split = build_datasets(cfg.data, cfg.seed);
    const nn::Batch probe = probe_batch(split.train, cfg.plot.batch);
    const analysis::LandscapeDirections dirs = analysis::default_landscape_directions(
        net, probe, cfg.plot.power_iters, mix_seed(cfg.seed, 7777), cfg.plot.random_directions);
    const linalg::DenseMatrix slice = analysis::loss_landscape_slice(
        net, probe, dirs.dir1, dirs.dir2, cfg.plot.span, cfg.plot.grid);
    std::string landscape = "a\tb\tloss\n";
    for (std::size_t i = 0; i < slice.rows; ++i) {
        for (std::size_t j = 0; j < slice.cols; ++j) {
            landscape += format_sig9(lattice_offset(i, cfg.plot.grid, cfg.plot.span)) + "\t" +
                         format_sig9(lattice_offset(j, cfg.plot.grid, cfg.plot.span)) + "\t" +
                         format_sig9(slice(i, j)) + "\n";
        }
    }
    write_text_file(out_dir + "/fig_landscape.tsv", landscape);

    if (cfg.plot.svg) {
        write_text_file(out_dir + "/fig_alignment.svg",
                        render_svg_chart("alignment vs epoch (" + cfg.optimizer.method + ")",
                                         alignment_pts, true));
        write_text_file(out_dir + "/fig_hessian.svg",
                        render_svg_chart("top Hessian eigenvalue vs iteration", hessian_pts, true));
        write_text_file(out_dir + "/fig_eig_variance.svg",
                        render_svg_chart("per-layer eigenvalue variance", variance_pts, false));
        write_text_file(out_dir + "/fig_angles.svg",
                        render_svg_chart("perturbation angle vs iteration", angle_pts, false));
        write_text_file(out_dir + "/fig_landscape.svg",
                        render_svg_heatmap("loss landscape slice", slice, cfg.plot.span));
    }
}

void run_prune_report(const std::string& run_dir, const std::string& out_dir) {
    for (const char* needed : {"prune_events.tsv", "metrics.tsv"}) {
        if (!fs::exists(run_dir + "/" + needed)) {
            throw std::runtime_error("prune-report: missing " + run_dir + "/" + needed +
                                     " (expected a finished training run)");
        }
    }
    const auto events = read_prune_events(run_dir + "/prune_events.tsv");
    const auto records = read_metrics(run_dir + "/metrics.tsv");
    if (records.empty()) throw std::runtime_error("prune-report: metrics.tsv has no rows");
    fs::create_directories(out_dir);

    const std::size_t layers = records.back().sparsity.size();
    std::vector<std::size_t> layer_events(layers, 0), layer_committed(layers, 0);
    std::vector<double> final_threshold(layers, 0.0), max_candidate(layers, 0.0);
    std::vector<double> last_seen(layers, 0.0);
    std::vector<bool> seen(layers, false);
    bool monotone = true;
    std::size_t committed_total = 0, vetoed_total = 0, violations = 0;
    for (const auto& e : events) {
        if (e.layer >= layers) {
            throw std::runtime_error("prune-report: event layer " + std::to_string(e.layer) +
                                     " out of range");
        }
        ++layer_events[e.layer];
        if (e.committed) {
            ++layer_committed[e.layer];
            ++committed_total;
            if (e.reconstruction_error > e.budget) ++violations;
        } else {
            ++vetoed_total;
        }
        if (seen[e.layer] && e.threshold > last_seen[e.layer]) monotone = false;
        last_seen[e.layer] = e.threshold;
        seen[e.layer] = true;
        final_threshold[e.layer] = e.threshold;
        max_candidate[e.layer] = std::max(max_candidate[e.layer], e.candidate_sparsity);
    }

    std::string out = "[prune_report]\n";
    out += "layers = " + std::to_string(layers) + "\n";
    out += "events_total = " + std::to_string(events.size()) + "\n";
    out += "committed_total = " + std::to_string(committed_total) + "\n";
    out += "vetoed_total = " + std::to_string(vetoed_total) + "\n";
    out += "veto_violations = " + std::to_string(violations) + "\n";
    out += std::string("thresholds_non_increasing = ") + (monotone ? "true" : "false") + "\n";
    for (std::size_t l = 0; l < layers; ++l) {
        const std::string tag = "layer_" + std::to_string(l);
        out += tag + "_events = " + std::to_string(layer_events[l]) + "\n";
        out += tag + "_committed = " + std::to_string(layer_committed[l]) + "\n";
        out += tag + "_final_threshold = " +
               (seen[l] ? format_exact(final_threshold[l]) : "NA") + "\n";
        out += tag + "_max_candidate_sparsity = " +
               (seen[l] ? format_exact(max_candidate[l]) : "NA") + "\n";
        out += tag + "_final_sparsity = " + format_exact(records.back().sparsity[l]) + "\n";
    }
    write_text_file(out_dir + "/prune_report.txt", out);
}

void write_failure_marker(const std::string& out_dir, const std::string& message) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::ofstream out(out_dir + "/FAILED", std::ios::binary);
    if (out) out << message << "\n";
}

}  // namespace dsbp::harness
