#include "fbsde/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace fbsde {

namespace {

struct Entry {
    std::string section, key, value;
    int line = 0;
    bool used = false;
};

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<Entry> tokenize(const std::string& text) {
    std::vector<Entry> entries;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::invalid_argument("config line " + std::to_string(lineno) +
                                            ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value");
        Entry e;
        e.section = section;
        e.key = trim(line.substr(0, eq));
        e.value = trim(line.substr(eq + 1));
        e.line = lineno;
        if (e.section.empty())
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": key outside any [section]");
        if (e.key.empty() || e.value.empty())
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": empty key or value");
        entries.push_back(std::move(e));
    }
    return entries;
}

class Reader {
  public:
    explicit Reader(std::vector<Entry> entries) : entries_(std::move(entries)) {}

    std::optional<std::string> str(const std::string& sec, const std::string& key) {
        for (Entry& e : entries_)
            if (e.section == sec && e.key == key) {
                e.used = true;
                return e.value;
            }
        return std::nullopt;
    }
    std::optional<double> real(const std::string& sec, const std::string& key) {
        const auto v = str(sec, key);
        if (!v) return std::nullopt;
        try {
            size_t pos = 0;
            const double d = std::stod(*v, &pos);
            if (pos != v->size()) throw std::invalid_argument("");
            return d;
        } catch (...) {
            throw std::invalid_argument("config line " + std::to_string(line_of(sec, key)) + ": '" +
                                        key + "' must be a real number");
        }
    }
    std::optional<long> integer(const std::string& sec, const std::string& key) {
        const auto v = str(sec, key);
        if (!v) return std::nullopt;
        try {
            size_t pos = 0;
            const long d = std::stol(*v, &pos);
            if (pos != v->size()) throw std::invalid_argument("");
            return d;
        } catch (...) {
            throw std::invalid_argument("config line " + std::to_string(line_of(sec, key)) + ": '" +
                                        key + "' must be an integer");
        }
    }
    std::optional<Vec> real_list(const std::string& sec, const std::string& key) {
        const auto v = str(sec, key);
        if (!v) return std::nullopt;
        Vec out;
        std::istringstream in(*v);
        std::string tok;
        while (in >> tok) {
            if (!tok.empty() && tok.back() == ',') tok.pop_back();
            if (tok.empty()) continue;
            try {
                out.push_back(std::stod(tok));
            } catch (...) {
                throw std::invalid_argument("config line " + std::to_string(line_of(sec, key)) +
                                            ": '" + key + "' must be a list of reals");
            }
        }
        return out;
    }
    /// keys in a section not consumed by any typed read
    std::vector<Entry> leftovers(const std::string& sec) const {
        std::vector<Entry> out;
        for (const Entry& e : entries_)
            if (e.section == sec && !e.used) out.push_back(e);
        return out;
    }
    void reject_unused() const {
        for (const Entry& e : entries_)
            if (!e.used)
                throw std::invalid_argument("config line " + std::to_string(e.line) +
                                            ": unknown key '" + e.key + "' in section [" +
                                            e.section + "]");
    }

  private:
    int line_of(const std::string& sec, const std::string& key) const {
        for (const Entry& e : entries_)
            if (e.section == sec && e.key == key) return e.line;
        return 0;
    }
    std::vector<Entry> entries_;
};

const std::map<std::string, std::vector<std::string>>& override_keys() {
    static const std::map<std::string, std::vector<std::string>> k = {
        {"HJB", {"t_end"}},
        {"BSB", {"t_end", "alpha", "r"}},
        {"AC", {"t_end"}},
        {"BZ", {"t_end", "alpha", "r", "D"}},
        {"PIDE", {"t_end", "epsilon", "tau", "lambda", "mu_phi", "sigma_phi"}},
    };
    return k;
}

} // namespace

ResolvedConfig parse_config(const std::string& text, const std::string& preset,
                            std::optional<uint64_t> seed_override) {
    if (preset != "paper" && preset != "desk")
        throw std::invalid_argument("preset must be 'paper' or 'desk'");
    Reader rd(tokenize(text));

    ResolvedConfig rc;
    const auto name = rd.str("problem", "name");
    if (!name)
        throw std::invalid_argument("config is missing required key 'name' in [problem] "
                                    "(required keys: [problem] name, [loss] method)");
    rc.problem_name = *name;
    if (std::find(problem_names().begin(), problem_names().end(), rc.problem_name) ==
        problem_names().end())
        throw std::invalid_argument("unknown problem '" + rc.problem_name + "'");

    const auto method_str = rd.str("loss", "method");
    if (!method_str)
        throw std::invalid_argument("config is missing required key 'method' in [loss] "
                                    "(required keys: [problem] name, [loss] method)");
    TrainConfig& t = rc.train;
    t.loss.method = parse_method(*method_str);

    const bool desk = preset == "desk";
    const bool pide = rc.problem_name == "PIDE";
    const bool shotgun_like = t.loss.uses_fine_step();

    // problem dimension and coefficient overrides
    if (const auto d = rd.integer("problem", "d"))
        rc.problem_dim = static_cast<int>(*d);
    else if (desk && rc.problem_name != "AC")
        rc.problem_dim = 10; // AC keeps d = 20: its reference exists only there
    auto it = override_keys().find(rc.problem_name);
    for (const std::string& key : it->second)
        if (const auto v = rd.real("problem", key)) rc.problem_overrides[key] = *v;

    // network defaults per the source experimental setup
    t.network.activation = pide ? Activation::LeakyRelu : Activation::Mish;
    t.network.hidden_layers = desk ? 2 : (pide ? 2 : 4);
    t.network.width = desk ? 64 : (pide ? 256 : 512);
    t.network.precision = desk ? Precision::F64 : Precision::F32;
    t.network.init_seed = 1;
    if (const auto v = rd.integer("network", "hidden_layers")) t.network.hidden_layers = static_cast<int>(*v);
    if (const auto v = rd.integer("network", "width")) t.network.width = static_cast<int>(*v);
    if (const auto v = rd.integer("network", "init_seed")) t.network.init_seed = static_cast<uint64_t>(*v);
    if (const auto v = rd.str("network", "activation")) {
        if (*v == "mish")
            t.network.activation = Activation::Mish;
        else if (*v == "leaky_relu")
            t.network.activation = Activation::LeakyRelu;
        else
            throw std::invalid_argument("activation must be mish or leaky_relu");
    }
    if (const auto v = rd.integer("network", "precision")) {
        if (*v == 32)
            t.network.precision = Precision::F32;
        else if (*v == 64)
            t.network.precision = Precision::F64;
        else
            throw std::invalid_argument("precision must be 32 or 64");
    }

    // loss defaults
    t.loss.m = t.loss.method == Method::Shotgun ? 50 : 10;
    t.loss.m1 = 5;
    t.loss.m2 = 5;
    t.loss.tau = std::pow(4.0, -5.0);
    if (const auto v = rd.integer("loss", "m")) t.loss.m = static_cast<int>(*v);
    if (const auto v = rd.integer("loss", "m1")) t.loss.m1 = static_cast<int>(*v);
    if (const auto v = rd.integer("loss", "m2")) t.loss.m2 = static_cast<int>(*v);
    if (const auto v = rd.real("loss", "tau")) t.loss.tau = *v;
    if (const auto v = rd.str("loss", "constraint")) {
        if (*v == "soft")
            t.loss.soft = true;
        else if (*v == "hard")
            t.loss.soft = false;
        else
            throw std::invalid_argument("constraint must be hard or soft");
    }
    if (const auto v = rd.real("loss", "lambda_t")) t.loss.lambda_t = *v;

    // train defaults
    t.iterations = desk ? 2000 : (pide ? 10000 : 100000);
    t.batch_size = 64;
    t.lr = 1e-3;
    t.schedule.kind = pide ? ScheduleKind::Piecewise : ScheduleKind::Cosine;
    t.schedule.boundaries = {1.0 / 3.0, 2.0 / 3.0};
    t.schedule.factors = {1.0, 0.1, 0.01};
    t.n_steps = shotgun_like ? 10 : (desk ? 50 : 100);
    t.eval_every = desk ? 100 : 1000;
    t.n_eval_trajectories = desk ? 16 : 256;
    t.seed = 1;
    if (const auto v = rd.integer("train", "iterations")) t.iterations = *v;
    if (const auto v = rd.integer("train", "batch_size")) t.batch_size = static_cast<int>(*v);
    if (const auto v = rd.real("train", "lr")) t.lr = *v;
    if (const auto v = rd.str("train", "schedule")) {
        if (*v == "cosine")
            t.schedule.kind = ScheduleKind::Cosine;
        else if (*v == "piecewise")
            t.schedule.kind = ScheduleKind::Piecewise;
        else
            throw std::invalid_argument("schedule must be cosine or piecewise");
    }
    if (const auto v = rd.real_list("train", "boundaries")) t.schedule.boundaries = *v;
    if (const auto v = rd.real_list("train", "factors")) t.schedule.factors = *v;
    if (const auto v = rd.integer("train", "seed")) t.seed = static_cast<uint64_t>(*v);
    if (const auto v = rd.integer("train", "eval_every")) t.eval_every = *v;
    if (const auto v = rd.integer("train", "n_eval_trajectories"))
        t.n_eval_trajectories = static_cast<int>(*v);
    if (const auto v = rd.integer("train", "n_steps")) t.n_steps = static_cast<int>(*v);
    if (const auto v = rd.integer("train", "hjb_mc_samples")) t.hjb_mc_samples = *v;
    if (const auto v = rd.real("train", "grad_clip")) t.grad_clip = *v;

    rd.reject_unused();
    if (seed_override) t.seed = *seed_override;

    t.validate();
    // incompatible pairs fail now, not at run time
    PDEProblem probe = rc.make();
    t.loss.scheme(probe);
    if (t.loss.method == Method::Heun && !probe.has_sigma_jacobian)
        throw std::invalid_argument("heun needs sigma Jacobians");

    auto add = [&](const std::string& k, const std::string& v) { rc.echo.emplace_back(k, v); };
    auto fmt = [](double v) {
        std::ostringstream os;
        os << v;
        return os.str();
    };
    add("problem.name", rc.problem_name);
    add("problem.d", std::to_string(probe.d));
    for (const auto& [k, v] : probe.params) add("problem." + k, fmt(v));
    add("network.hidden_layers", std::to_string(t.network.hidden_layers));
    add("network.width", std::to_string(t.network.width));
    add("network.activation", t.network.activation == Activation::Mish ? "mish" : "leaky_relu");
    add("network.precision", t.network.precision == Precision::F64 ? "64" : "32");
    add("network.init_seed", std::to_string(t.network.init_seed));
    add("loss.method", method_name(t.loss.method));
    add("loss.m", std::to_string(t.loss.m));
    add("loss.m1", std::to_string(t.loss.m1));
    add("loss.m2", std::to_string(t.loss.m2));
    add("loss.tau", fmt(t.loss.tau));
    add("loss.constraint", t.loss.soft ? "soft" : "hard");
    add("loss.lambda_t", fmt(t.loss.lambda_t));
    add("train.iterations", std::to_string(t.iterations));
    add("train.batch_size", std::to_string(t.batch_size));
    add("train.lr", fmt(t.lr));
    add("train.schedule", t.schedule.kind == ScheduleKind::Cosine ? "cosine" : "piecewise");
    add("train.seed", std::to_string(t.seed));
    add("train.eval_every", std::to_string(t.eval_every));
    add("train.n_eval_trajectories", std::to_string(t.n_eval_trajectories));
    add("train.n_steps", std::to_string(t.n_steps));
    return rc;
}

ResolvedConfig load_config(const std::string& path, const std::string& preset,
                           std::optional<uint64_t> seed_override) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), preset, seed_override);
}

std::string file_hash_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open file for hashing: " + path);
    uint64_t h = 0xcbf29ce484222325ULL;
    char c;
    while (in.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

} // namespace fbsde
