#include "dsbp/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

namespace dsbp::harness {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
    throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

std::uint64_t parse_u64(const std::string& v, std::size_t line, const std::string& key) {
    if (v.empty()) fail(line, "empty value for key '" + key + "'");
    char* end = nullptr;
    errno = 0;
    const unsigned long long out = std::strtoull(v.c_str(), &end, 10);
    if (errno != 0 || end != v.c_str() + v.size() || v[0] == '-') {
        fail(line, "invalid unsigned integer '" + v + "' for key '" + key + "'");
    }
    return static_cast<std::uint64_t>(out);
}

std::size_t parse_size(const std::string& v, std::size_t line, const std::string& key) {
    return static_cast<std::size_t>(parse_u64(v, line, key));
}

double parse_double(const std::string& v, std::size_t line, const std::string& key) {
    if (v.empty()) fail(line, "empty value for key '" + key + "'");
    char* end = nullptr;
    errno = 0;
    const double out = std::strtod(v.c_str(), &end);
    if (errno != 0 || end != v.c_str() + v.size()) {
        fail(line, "invalid number '" + v + "' for key '" + key + "'");
    }
    return out;
}

bool parse_bool(const std::string& v, std::size_t line, const std::string& key) {
    if (v == "true") return true;
    if (v == "false") return false;
    fail(line, "invalid boolean '" + v + "' for key '" + key + "' (use true|false)");
}

std::vector<std::string> split_ws(const std::string& v) {
    std::vector<std::string> parts;
    std::istringstream in(v);
    std::string tok;
    while (in >> tok) parts.push_back(tok);
    return parts;
}

std::vector<std::size_t> parse_size_list(const std::string& v, std::size_t line,
                                         const std::string& key) {
    std::vector<std::size_t> out;
    for (const auto& tok : split_ws(v)) out.push_back(parse_size(tok, line, key));
    return out;
}

std::vector<double> parse_double_list(const std::string& v, std::size_t line,
                                      const std::string& key) {
    std::vector<double> out;
    for (const auto& tok : split_ws(v)) out.push_back(parse_double(tok, line, key));
    return out;
}

std::string format_list(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ' ';
        out += format_exact(v[i]);
    }
    return out;
}

std::string format_list(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ' ';
        out += std::to_string(v[i]);
    }
    return out;
}

[[noreturn]] void check_fail(const std::string& section, const std::string& msg) {
    throw ConfigError("config: [" + section + "] " + msg);
}

void require(bool ok, const std::string& section, const std::string& msg) {
    if (!ok) check_fail(section, msg);
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

// shortest decimal form that parses back to the same double
std::string format_exact(double v) {
    char buf[64];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    return buf;
}

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::string section;
    std::set<std::string> seen;  // "section/key"
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;

    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;

        if (line.front() == '[') {
            if (line.back() != ']') fail(line_no, "unterminated section header '" + line + "'");
            section = trim(line.substr(1, line.size() - 2));
            static const std::set<std::string> known = {"run",  "data", "model", "optimizer",
                                                        "metrics", "meta", "sde",  "bound",
                                                        "plot"};
            if (!known.count(section)) fail(line_no, "unknown section [" + section + "]");
            continue;
        }

        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) fail(line_no, "expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) fail(line_no, "missing key before '='");
        if (section.empty()) fail(line_no, "key '" + key + "' outside any section");
        if (!seen.insert(section + "/" + key).second) {
            fail(line_no, "duplicate key '" + key + "' in section [" + section + "]");
        }

        const auto unknown = [&]() -> void {
            fail(line_no, "unknown key '" + key + "' in section [" + section + "]");
        };

        if (section == "run") {
            if (key == "name") cfg.run_name = value;
            else if (key == "seed") cfg.seed = parse_u64(value, line_no, key);
            else if (key == "threads") cfg.threads = parse_size(value, line_no, key);
            else unknown();
        } else if (section == "data") {
            auto& d = cfg.data;
            if (key == "kind") d.kind = value;
            else if (key == "seed") d.seed = parse_u64(value, line_no, key);
            else if (key == "classes") d.classes = parse_size(value, line_no, key);
            else if (key == "per_class") d.per_class = parse_size(value, line_no, key);
            else if (key == "test_per_class") d.test_per_class = parse_size(value, line_no, key);
            else if (key == "dims") d.dims = parse_size(value, line_no, key);
            else if (key == "separation") d.separation = parse_double(value, line_no, key);
            else if (key == "count") d.count = parse_size(value, line_no, key);
            else if (key == "test_count") d.test_count = parse_size(value, line_no, key);
            else if (key == "train_images") d.train_images = value;
            else if (key == "train_labels") d.train_labels = value;
            else if (key == "test_images") d.test_images = value;
            else if (key == "test_labels") d.test_labels = value;
            else unknown();
        } else if (section == "model") {
            auto& m = cfg.model;
            if (key == "layers") m.layers = parse_size_list(value, line_no, key);
            else if (key == "hidden") m.hidden = value;
            else unknown();
        } else if (section == "optimizer") {
            auto& o = cfg.optimizer;
            if (key == "method") o.method = value;
            else if (key == "eta") o.eta = parse_double(value, line_no, key);
            else if (key == "k") o.k = parse_size(value, line_no, key);
            else if (key == "p0") o.p0 = parse_size(value, line_no, key);
            else if (key == "tau0") o.tau0 = parse_double(value, line_no, key);
            else if (key == "beta") o.beta = parse_double(value, line_no, key);
            else if (key == "alpha") o.alpha = parse_double(value, line_no, key);
            else if (key == "power_iters") o.power_iters = parse_size(value, line_no, key);
            else if (key == "batch_size") o.batch_size = parse_size(value, line_no, key);
            else if (key == "epochs") o.epochs = parse_size(value, line_no, key);
            else if (key == "total_iters") o.total_iters = parse_size(value, line_no, key);
            else if (key == "prune") o.prune = parse_bool(value, line_no, key);
            else if (key == "sam_rho") o.sam_rho = parse_double(value, line_no, key);
            else unknown();
        } else if (section == "metrics") {
            auto& m = cfg.metrics;
            if (key == "hessian_every") m.hessian_every = parse_size(value, line_no, key);
            else if (key == "test_every") m.test_every = parse_size(value, line_no, key);
            else unknown();
        } else if (section == "meta") {
            auto& m = cfg.meta;
            if (key == "n_way") m.n_way = parse_size(value, line_no, key);
            else if (key == "k_shot") m.k_shot = parse_size(value, line_no, key);
            else if (key == "query_per_class") m.query_per_class = parse_size(value, line_no, key);
            else if (key == "inner_steps") m.inner_steps = parse_size(value, line_no, key);
            else if (key == "outer_steps") m.outer_steps = parse_size(value, line_no, key);
            else if (key == "outer_step") m.outer_step = parse_double(value, line_no, key);
            else if (key == "buffer_k") m.buffer_k = parse_size(value, line_no, key);
            else if (key == "hessian_every") m.hessian_every = parse_size(value, line_no, key);
            else if (key == "eval_episodes") m.eval_episodes = parse_size(value, line_no, key);
            else unknown();
        } else if (section == "sde") {
            auto& s = cfg.sde;
            if (key == "eta") s.eta = parse_double(value, line_no, key);
            else if (key == "horizon") s.horizon = parse_double(value, line_no, key);
            else if (key == "steps") s.steps = parse_size(value, line_no, key);
            else if (key == "diffusion") s.diffusion = value;
            else if (key == "weak_etas") s.weak_etas = parse_double_list(value, line_no, key);
            else if (key == "weak_seeds") s.weak_seeds = parse_size(value, line_no, key);
            else if (key == "weak_curvature")
                s.weak_curvature = parse_double_list(value, line_no, key);
            else if (key == "weak_noise") s.weak_noise = parse_double_list(value, line_no, key);
            else if (key == "weak_start") s.weak_start = parse_double_list(value, line_no, key);
            else if (key == "weak_horizon") s.weak_horizon = parse_double(value, line_no, key);
            else unknown();
        } else if (section == "bound") {
            auto& b = cfg.bound;
            if (key == "summary") b.summary = value;
            else if (key == "sigma") b.sigma = parse_double_list(value, line_no, key);
            else if (key == "third_deriv") b.third_deriv = parse_double_list(value, line_no, key);
            else if (key == "loss_bound") b.loss_bound = parse_double(value, line_no, key);
            else if (key == "confidence") b.confidence = parse_double(value, line_no, key);
            else unknown();
        } else if (section == "plot") {
            auto& p = cfg.plot;
            if (key == "grid") p.grid = parse_size(value, line_no, key);
            else if (key == "span") p.span = parse_double(value, line_no, key);
            else if (key == "power_iters") p.power_iters = parse_size(value, line_no, key);
            else if (key == "random_directions")
                p.random_directions = parse_bool(value, line_no, key);
            else if (key == "batch") p.batch = parse_size(value, line_no, key);
            else if (key == "svg") p.svg = parse_bool(value, line_no, key);
            else unknown();
        }
    }

    validate_config(cfg);
    return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot open file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

void validate_config(const ExperimentConfig& cfg) {
    require(!cfg.run_name.empty(), "run", "name must be nonempty");
    require(cfg.threads >= 1, "run", "threads must be at least 1");

    const auto& d = cfg.data;
    if (d.kind == "blobs") {
        require(d.classes >= 2, "data", "classes must be at least 2");
        require(d.per_class >= 1, "data", "per_class must be at least 1");
        require(d.dims >= 1, "data", "dims must be at least 1");
        require(finite(d.separation) && d.separation > 0.0, "data",
                "separation must be finite and positive");
    } else if (d.kind == "digits") {
        require(d.count >= 1, "data", "count must be at least 1");
    } else if (d.kind == "idx") {
        require(!d.train_images.empty() && !d.train_labels.empty(), "data",
                "idx kind needs train_images and train_labels paths");
        require(d.test_images.empty() == d.test_labels.empty(), "data",
                "test_images and test_labels must be given together");
    } else {
        check_fail("data", "kind '" + d.kind + "' must be one of blobs|digits|idx");
    }

    const auto& m = cfg.model;
    require(m.layers.size() >= 2, "model", "layers needs at least an input and an output width");
    for (std::size_t w : m.layers) require(w >= 1, "model", "layer widths must be positive");
    require(m.hidden == "relu" || m.hidden == "identity", "model",
            "hidden '" + m.hidden + "' must be one of relu|identity");

    const auto& o = cfg.optimizer;
    require(o.method == "sgd" || o.method == "sam" || o.method == "dsbp" || o.method == "lie",
            "optimizer", "method '" + o.method + "' must be one of sgd|sam|dsbp|lie");
    require(finite(o.eta) && o.eta >= 0.0, "optimizer", "eta must be finite and non-negative");
    require(o.k >= 1, "optimizer", "k must be at least 1");
    require(finite(o.tau0) && o.tau0 >= 0.0, "optimizer", "tau0 must be finite and non-negative");
    require(finite(o.beta) && o.beta >= 0.0, "optimizer", "beta must be finite and non-negative");
    require(finite(o.alpha) && o.alpha >= 0.0, "optimizer",
            "alpha must be finite and non-negative");
    require(o.power_iters >= 1, "optimizer", "power_iters must be at least 1");
    require(o.batch_size >= 1, "optimizer", "batch_size must be at least 1");
    require(o.epochs >= 1 || o.total_iters >= 1, "optimizer",
            "either epochs or total_iters must be positive");
    if (o.method == "sam") {
        require(finite(o.sam_rho) && o.sam_rho > 0.0, "optimizer",
                "sam_rho must be positive for method sam");
    }

    const auto& me = cfg.meta;
    require(me.n_way >= 2, "meta", "n_way must be at least 2");
    require(me.k_shot >= 1, "meta", "k_shot must be at least 1");
    require(me.query_per_class >= 1, "meta", "query_per_class must be at least 1");
    require(me.outer_steps >= 1, "meta", "outer_steps must be at least 1");
    require(finite(me.outer_step) && me.outer_step >= 0.0 && me.outer_step <= 1.0, "meta",
            "outer_step must lie in [0, 1]");
    require(me.buffer_k >= 1, "meta", "buffer_k must be at least 1");

    const auto& s = cfg.sde;
    require(s.diffusion == "diagonal" || s.diffusion == "zero", "sde",
            "diffusion '" + s.diffusion + "' must be one of diagonal|zero");
    require(s.steps >= 1, "sde", "steps must be at least 1");
    require(finite(s.horizon) && s.horizon > 0.0, "sde", "horizon must be positive");
    require(finite(s.eta) && s.eta >= 0.0, "sde", "eta must be finite and non-negative");
    if (!s.weak_etas.empty()) {
        require(s.weak_seeds >= 1, "sde", "weak_seeds must be at least 1");
        require(s.weak_curvature.size() == s.weak_noise.size() &&
                    s.weak_curvature.size() == s.weak_start.size() && !s.weak_curvature.empty(),
                "sde", "weak_curvature, weak_noise and weak_start need matching nonzero sizes");
        require(finite(s.weak_horizon) && s.weak_horizon > 0.0, "sde",
                "weak_horizon must be positive");
    }

    const auto& b = cfg.bound;
    require(!b.sigma.empty(), "bound", "sigma needs at least one value");
    for (double v : b.sigma) require(finite(v) && v > 0.0, "bound", "sigma values must be positive");
    require(!b.third_deriv.empty(), "bound", "third_deriv needs at least one value");
    for (double v : b.third_deriv) {
        require(finite(v) && v >= 0.0, "bound", "third_deriv values must be non-negative");
    }
    require(finite(b.loss_bound) && b.loss_bound > 0.0, "bound", "loss_bound must be positive");
    require(finite(b.confidence) && b.confidence > 0.0 && b.confidence < 1.0, "bound",
            "confidence must lie in (0, 1)");

    const auto& p = cfg.plot;
    require(p.grid >= 1, "plot", "grid must be at least 1");
    require(finite(p.span) && p.span >= 0.0, "plot", "span must be finite and non-negative");
    require(p.power_iters >= 1, "plot", "power_iters must be at least 1");
    require(p.batch >= 1, "plot", "batch must be at least 1");
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream out;
    out << "[run]\n";
    out << "name = " << cfg.run_name << "\n";
    out << "seed = " << cfg.seed << "\n";
    out << "threads = " << cfg.threads << "\n";
    out << "\n[data]\n";
    const auto& d = cfg.data;
    out << "kind = " << d.kind << "\n";
    out << "seed = " << d.seed << "\n";
    out << "classes = " << d.classes << "\n";
    out << "per_class = " << d.per_class << "\n";
    out << "test_per_class = " << d.test_per_class << "\n";
    out << "dims = " << d.dims << "\n";
    out << "separation = " << format_exact(d.separation) << "\n";
    out << "count = " << d.count << "\n";
    out << "test_count = " << d.test_count << "\n";
    out << "train_images = " << d.train_images << "\n";
    out << "train_labels = " << d.train_labels << "\n";
    out << "test_images = " << d.test_images << "\n";
    out << "test_labels = " << d.test_labels << "\n";
    out << "\n[model]\n";
    out << "layers = " << format_list(cfg.model.layers) << "\n";
    out << "hidden = " << cfg.model.hidden << "\n";
    out << "\n[optimizer]\n";
    const auto& o = cfg.optimizer;
    out << "method = " << o.method << "\n";
    out << "eta = " << format_exact(o.eta) << "\n";
    out << "k = " << o.k << "\n";
    out << "p0 = " << o.p0 << "\n";
    out << "tau0 = " << format_exact(o.tau0) << "\n";
    out << "beta = " << format_exact(o.beta) << "\n";
    out << "alpha = " << format_exact(o.alpha) << "\n";
    out << "power_iters = " << o.power_iters << "\n";
    out << "batch_size = " << o.batch_size << "\n";
    out << "epochs = " << o.epochs << "\n";
    out << "total_iters = " << o.total_iters << "\n";
    out << "prune = " << (o.prune ? "true" : "false") << "\n";
    out << "sam_rho = " << format_exact(o.sam_rho) << "\n";
    out << "\n[metrics]\n";
    out << "hessian_every = " << cfg.metrics.hessian_every << "\n";
    out << "test_every = " << cfg.metrics.test_every << "\n";
    out << "\n[meta]\n";
    const auto& me = cfg.meta;
    out << "n_way = " << me.n_way << "\n";
    out << "k_shot = " << me.k_shot << "\n";
    out << "query_per_class = " << me.query_per_class << "\n";
    out << "inner_steps = " << me.inner_steps << "\n";
    out << "outer_steps = " << me.outer_steps << "\n";
    out << "outer_step = " << format_exact(me.outer_step) << "\n";
    out << "buffer_k = " << me.buffer_k << "\n";
    out << "hessian_every = " << me.hessian_every << "\n";
    out << "eval_episodes = " << me.eval_episodes << "\n";
    out << "\n[sde]\n";
    const auto& s = cfg.sde;
    out << "eta = " << format_exact(s.eta) << "\n";
    out << "horizon = " << format_exact(s.horizon) << "\n";
    out << "steps = " << s.steps << "\n";
    out << "diffusion = " << s.diffusion << "\n";
    out << "weak_etas = " << format_list(s.weak_etas) << "\n";
    out << "weak_seeds = " << s.weak_seeds << "\n";
    out << "weak_curvature = " << format_list(s.weak_curvature) << "\n";
    out << "weak_noise = " << format_list(s.weak_noise) << "\n";
    out << "weak_start = " << format_list(s.weak_start) << "\n";
    out << "weak_horizon = " << format_exact(s.weak_horizon) << "\n";
    out << "\n[bound]\n";
    const auto& b = cfg.bound;
    out << "summary = " << b.summary << "\n";
    out << "sigma = " << format_list(b.sigma) << "\n";
    out << "third_deriv = " << format_list(b.third_deriv) << "\n";
    out << "loss_bound = " << format_exact(b.loss_bound) << "\n";
    out << "confidence = " << format_exact(b.confidence) << "\n";
    out << "\n[plot]\n";
    const auto& p = cfg.plot;
    out << "grid = " << p.grid << "\n";
    out << "span = " << format_exact(p.span) << "\n";
    out << "power_iters = " << p.power_iters << "\n";
    out << "random_directions = " << (p.random_directions ? "true" : "false") << "\n";
    out << "batch = " << p.batch << "\n";
    out << "svg = " << (p.svg ? "true" : "false") << "\n";
    return out.str();
}

}  // namespace dsbp::harness
