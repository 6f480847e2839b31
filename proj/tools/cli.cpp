#include "cli.hpp"

#include "bsing/cylinder_pde.hpp"
#include "bsing/errors.hpp"
#include "bsing/exponents.hpp"
#include "bsing/identities.hpp"
#include "bsing/parallel.hpp"
#include "bsing/shooting.hpp"
#include "bsing/sphere_ode.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace bsing::cli {

using nlohmann::json;

// ---------------------------------------------------------------- JSON

json number(double x) {
    if (std::isnan(x))
        return "nan";
    if (std::isinf(x))
        return x > 0 ? "inf" : "-inf";
    return x;
}

double number_value(const json& j) {
    if (j.is_string()) {
        const auto& s = j.get_ref<const std::string&>();
        if (s == "nan")
            return std::numeric_limits<double>::quiet_NaN();
        if (s == "inf")
            return std::numeric_limits<double>::infinity();
        if (s == "-inf")
            return -std::numeric_limits<double>::infinity();
        throw std::invalid_argument("not a number: " + s);
    }
    return j.get<double>();
}

namespace {

void write_double(std::ostream& os, double x) {
    if (!std::isfinite(x)) {
        os << '"' << (std::isnan(x) ? "nan" : (x > 0 ? "inf" : "-inf")) << '"';
        return;
    }
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
    std::string s(buf, res.ptr);
    // keep a float marker so the value re-parses as a double
    if (s.find_first_of(".eE") == std::string::npos)
        s += ".0";
    os << s;
}

void write_json(std::ostream& os, const json& j, int indent, int depth) {
    const bool pretty = indent >= 0;
    auto newline = [&](int d) {
        if (pretty)
            os << '\n' << std::string(static_cast<std::size_t>(indent * d), ' ');
    };
    switch (j.type()) {
    case json::value_t::object: {
        if (j.empty()) {
            os << "{}";
            return;
        }
        os << '{';
        bool first = true;
        for (const auto& [k, v] : j.items()) {
            if (!first)
                os << ',';
            first = false;
            newline(depth + 1);
            os << json(k).dump() << (pretty ? ": " : ":");
            write_json(os, v, indent, depth + 1);
        }
        newline(depth);
        os << '}';
        return;
    }
    case json::value_t::array: {
        if (j.empty()) {
            os << "[]";
            return;
        }
        os << '[';
        bool first = true;
        for (const auto& v : j) {
            if (!first)
                os << ',';
            first = false;
            newline(depth + 1);
            write_json(os, v, indent, depth + 1);
        }
        newline(depth);
        os << ']';
        return;
    }
    case json::value_t::number_float:
        write_double(os, j.get<double>());
        return;
    default:
        os << j.dump();
    }
}

} // namespace

std::string to_json_text(const json& j, int indent) {
    std::ostringstream os;
    write_json(os, j, indent, 0);
    return os.str();
}

std::string serialize(const RunRecord& r) {
    json j;
    j["subcommand"] = r.config.subcommand;
    j["config"] = r.config.values;
    j["version"] = r.version;
    if (r.wall_time)
        j["wall_time_s"] = number(*r.wall_time);
    j["result"] = r.result;
    return to_json_text(j) + "\n";
}

RunRecord parse_record(const std::string& text) {
    const json j = json::parse(text);
    RunRecord r;
    r.config.subcommand = j.at("subcommand").get<std::string>();
    r.config.values = j.at("config").get<std::map<std::string, std::string>>();
    r.version = j.at("version").get<std::string>();
    if (j.contains("wall_time_s"))
        r.wall_time = number_value(j.at("wall_time_s"));
    r.result = j.at("result");
    return r;
}

// ---------------------------------------------------------------- config

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot read config file " + path.string());
    std::map<std::string, std::string> out;
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos)
            return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#')
            continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        if (key.empty())
            throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
        out[key] = value;
    }
    return out;
}

namespace {

struct Options {
    int dim = 4;
    std::string q = "2";
    std::string exponent_q;
    std::string lambda = "ell";
    double amplitude = std::numeric_limits<double>::quiet_NaN();
    std::size_t nodes = ThetaGrid::kDefaultNodes;
    bool linear = false;
    double scan_min = 1e-4;
    double scan_max = 1e4;
    std::size_t samples = 400;
    double tol = 1e-8;
    std::string q_from;
    std::string q_to;
    std::size_t steps = 20;
    std::string identity = "all";
    double T = 20.0;
    std::size_t nt = 129;
    std::size_t ntheta = 129;
    std::string g0 = "omega0*2";
    std::string g1 = "omega0";
    std::string guess = "blend";
    std::string continuation = "none";
    int continuation_steps = 4;
    double newton_tol = 1e-8;
    int max_newton = 60;
    std::string csv;
    std::string field_csv;
    std::string trace_csv;
    std::string record;
    unsigned workers = default_workers();
    bool timing = false;
};

const CLI::Validator& writable_path() {
    static const CLI::Validator v(
        [](std::string& p) -> std::string {
            const std::filesystem::path path(p);
            const auto parent = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
            if (!std::filesystem::is_directory(parent))
                return "directory of " + p + " does not exist";
            if (std::filesystem::is_directory(path))
                return p + " is a directory";
            return {};
        },
        "PATH", "writable path");
    return v;
}

void add_problem(CLI::App* s, Options& o, bool with_lambda = true) {
    s->add_option("--dim", o.dim, "dimension N >= 4");
    s->add_option("--q", o.q, "exponent q (decimal or a/b)");
    if (with_lambda)
        s->add_option("--lambda", o.lambda, "spectral parameter, or 'ell' for ell(N,q)");
}

void add_shooting(CLI::App* s, Options& o) {
    s->add_option("--scan-min", o.scan_min, "smallest scanned amplitude")->check(CLI::PositiveNumber);
    s->add_option("--scan-max", o.scan_max, "largest scanned amplitude")->check(CLI::PositiveNumber);
    s->add_option("--samples", o.samples, "amplitudes in the log scan")->check(CLI::Range(2, 1000000));
    s->add_option("--tol", o.tol, "boundary tolerance |v(pi/2)|")->check(CLI::PositiveNumber);
    s->add_option("--nodes", o.nodes, "theta grid nodes")->check(CLI::Range(66, 100000000));
    s->add_option("--workers", o.workers, "worker threads (default BSING_WORKERS or hardware)")
        ->check(CLI::Range(1, 4096));
}

void build(CLI::App& app, Options& o) {
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.set_version_flag("--version", std::string(kVersion));

    auto config = [](CLI::App* s) {
        s->add_option("--config", "key = value file; flags override file values");
    };
    auto common = [&](CLI::App* s) {
        s->add_option("--record", o.record, "also write the run record JSON here")->check(writable_path());
        s->add_flag("--timing", o.timing, "include wall time in the run record");
        config(s);
    };

    auto* ex = app.add_subcommand("exponents", "critical exponents, ell and damping coefficient");
    ex->add_option("--dim", o.dim, "dimension N >= 4");
    ex->add_option("--q", o.exponent_q, "optional exponent for ell, beta and regime");
    common(ex);

    auto* ode = app.add_subcommand("solve-ode", "one shot of the meridian ODE");
    add_problem(ode, o);
    ode->add_option("--amplitude", o.amplitude, "v(0)");
    ode->add_option("--nodes", o.nodes, "theta grid nodes")->check(CLI::Range(66, 100000000));
    ode->add_flag("--linear", o.linear, "drop the v^q term");
    ode->add_option("--csv", o.csv, "profile CSV theta,v,dv")->check(writable_path());
    common(ode);

    auto* shoot = app.add_subcommand("shoot", "shooting for the positive profile");
    add_problem(shoot, o);
    add_shooting(shoot, o);
    shoot->add_option("--csv", o.csv, "profile CSV theta,v,dv")->check(writable_path());
    common(shoot);

    auto* scan = app.add_subcommand("scan", "existence scan over q, CSV q,regime,status,amplitude,residual");
    scan->add_option("--dim", o.dim, "dimension N >= 4");
    scan->add_option("--q-from", o.q_from, "first exponent");
    scan->add_option("--q-to", o.q_to, "last exponent");
    scan->add_option("--steps", o.steps, "number of exponents")->check(CLI::Range(1, 1000000));
    scan->add_option("--lambda", o.lambda, "spectral parameter, or 'ell'");
    add_shooting(scan, o);
    scan->add_option("--csv", o.csv, "write the CSV here instead of stdout")->check(writable_path());
    common(scan);

    auto* verify = app.add_subcommand("verify", "integral identities on the shooting profile, one JSON per line");
    add_problem(verify, o);
    add_shooting(verify, o);
    verify->add_option("--identity", o.identity, "phi|pohozaev|kwongli|cross|all")
        ->check(CLI::IsMember({"phi", "pohozaev", "kwongli", "cross", "all"}));
    common(verify);

    auto* cyl = app.add_subcommand("cylinder", "elliptic problem on the log-cylinder");
    add_problem(cyl, o, false);
    cyl->add_option("--T", o.T, "cylinder length")->check(CLI::PositiveNumber);
    cyl->add_option("--nt", o.nt, "t nodes")->check(CLI::Range(64, 1000000));
    cyl->add_option("--ntheta", o.ntheta, "theta nodes")->check(CLI::Range(66, 1000000));
    cyl->add_option("--g0", o.g0, "data at t=0: {omega0|phi|zero}*scale");
    cyl->add_option("--g1", o.g1, "data at t=T: {omega0|phi|zero}*scale");
    cyl->add_option("--guess", o.guess, "initial guess")->check(CLI::IsMember({"blend", "linear"}));
    cyl->add_option("--continuation", o.continuation, "data continuation")
        ->check(CLI::IsMember({"none", "end", "zero"}));
    cyl->add_option("--steps", o.continuation_steps, "continuation steps")->check(CLI::Range(1, 10000));
    cyl->add_option("--newton-tol", o.newton_tol, "residual max-norm")->check(CLI::PositiveNumber);
    cyl->add_option("--max-newton", o.max_newton, "Newton iteration cap")->check(CLI::Range(1, 100000));
    cyl->add_option("--nodes", o.nodes, "theta nodes for the shooting seed")->check(CLI::Range(66, 100000000));
    cyl->add_option("--field-csv", o.field_csv, "field CSV t,theta,w")->check(writable_path());
    cyl->add_option("--trace-csv", o.trace_csv, "energy trace CSV t,H,kinetic")->check(writable_path());
    common(cyl);
}

bool is_flag(const CLI::Option* opt) { return opt->get_expected_min() == 0; }

std::string long_name(const CLI::Option* opt) {
    const auto& names = opt->get_lnames();
    return names.empty() ? std::string() : names.front();
}

// Tokens for the file values, validated against the subcommand.
std::vector<std::string> file_tokens(CLI::App* sub, const std::map<std::string, std::string>& values) {
    std::vector<std::string> tokens;
    for (const auto& [key, value] : values) {
        const CLI::Option* opt = sub->get_option_no_throw("--" + key);
        if (opt == nullptr || key == "config" || key == "help")
            throw std::invalid_argument("unknown config key '" + key + "' for " + sub->get_name());
        if (is_flag(opt)) {
            if (value == "true" || value == "1" || value == "yes")
                tokens.push_back("--" + key);
            else if (!(value == "false" || value == "0" || value == "no"))
                throw std::invalid_argument("config key '" + key + "' expects true or false");
            continue;
        }
        tokens.push_back("--" + key);
        tokens.push_back(value);
    }
    return tokens;
}

RunConfig echo(const CLI::App* sub) {
    RunConfig c;
    c.subcommand = sub->get_name();
    for (const CLI::Option* opt : sub->get_options()) {
        const std::string name = long_name(opt);
        if (name.empty() || name == "help" || name == "config" || name == "timing" || name == "record")
            continue;
        if (is_flag(opt)) {
            c.values[name] = opt->count() > 0 ? "true" : "false";
        } else if (opt->count() > 0) {
            c.values[name] = opt->results().back();
        } else {
            c.values[name] = opt->get_default_str();
        }
    }
    return c;
}

// Splits --config out of the argument list; returns the remaining args.
std::vector<std::string> extract_config(const std::vector<std::string>& args, std::optional<std::string>& path) {
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a == "--config") {
            if (i + 1 >= args.size())
                throw CLI::ArgumentMismatch("--config needs a file");
            path = args[++i];
        } else if (a.rfind("--config=", 0) == 0) {
            path = a.substr(9);
        } else {
            rest.push_back(a);
        }
    }
    return rest;
}

struct Real {
    double value = 0.0;
    std::optional<Rational> exact;
};

Real parse_real(const std::string& text, const char* what) {
    auto parse_int = [&](const std::string& s, std::int64_t& out) {
        const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
        return res.ec == std::errc() && res.ptr == s.data() + s.size();
    };
    Real r;
    const auto slash = text.find('/');
    if (slash != std::string::npos) {
        std::int64_t n = 0, d = 0;
        if (!parse_int(text.substr(0, slash), n) || !parse_int(text.substr(slash + 1), d) || d == 0)
            throw CLI::ValidationError(std::string(what) + ": cannot parse '" + text + "'");
        r.exact = Rational(n, d);
        r.value = r.exact->value();
        return r;
    }
    std::int64_t n = 0;
    if (parse_int(text, n)) {
        r.exact = Rational(n);
        r.value = static_cast<double>(n);
        return r;
    }
    double x = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), x);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size() || !std::isfinite(x))
        throw CLI::ValidationError(std::string(what) + ": cannot parse '" + text + "'");
    r.value = x;
    return r;
}

double parse_lambda(const std::string& text, int N, double q) {
    if (text == "ell")
        return ell(N, q);
    return parse_real(text, "--lambda").value;
}

std::string rational_text(const Rational& r) {
    return r.den == 1 ? std::to_string(r.num) : std::to_string(r.num) + "/" + std::to_string(r.den);
}

Regime regime_of(int N, const Real& q) {
    return q.exact ? classify_regime(N, *q.exact) : classify_regime(N, q.value);
}

ShootingConfig shooting_config(const Options& o) {
    ShootingConfig c;
    c.scan_min = o.scan_min;
    c.scan_max = o.scan_max;
    c.samples = o.samples;
    c.tol = o.tol;
    c.grid = ThetaGrid(o.nodes);
    c.workers = o.workers;
    if (!(c.scan_min < c.scan_max))
        throw CLI::ValidationError("--scan-min must be below --scan-max");
    return c;
}

json report_json(const IdentityReport& r) {
    return {{"name", r.name},
            {"lhs", number(r.lhs)},
            {"rhs", number(r.rhs)},
            {"residual", number(r.residual)},
            {"relative_residual", number(r.relative_residual)},
            {"sign_violation", r.sign_violation}};
}

template <class Fn>
void write_file(const std::string& path, Fn&& fn) {
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw std::ios_base::failure("cannot write " + path);
    fn(f);
    if (!f)
        throw std::ios_base::failure("write failed for " + path);
}

std::string csv_number(double x) {
    std::ostringstream os;
    write_double(os, x);
    std::string s = os.str();
    if (!s.empty() && s.front() == '"')
        s = s.substr(1, s.size() - 2);
    return s;
}

// ---------------------------------------------------------------- commands

struct Outcome {
    json result = json::object();
    int code = 0;
    /// Primary stdout text; empty means "print the run record".
    std::optional<std::string> text;
};

Outcome cmd_exponents(const Options& o) {
    const CriticalSet cs = critical_exponents(o.dim);
    Outcome out;
    out.result = {{"N", o.dim},
                  {"q1", number(cs.q1)},
                  {"q2", number(cs.q2)},
                  {"q3", number(cs.q3)},
                  {"q1_exact", rational_text(cs.q1_exact)},
                  {"q2_exact", rational_text(cs.q2_exact)},
                  {"q3_exact", rational_text(cs.q3_exact)}};
    if (!o.exponent_q.empty()) {
        const Real q = parse_real(o.exponent_q, "--q");
        ProblemParams{o.dim, q.value, 0.0}.validate();
        out.result["q"] = number(q.value);
        out.result["ell"] = number(ell(o.dim, q.value));
        out.result["beta"] = number(damping_coefficient(o.dim, q.value));
        out.result["regime"] = std::string(to_string(regime_of(o.dim, q)));
    }
    return out;
}

Outcome cmd_solve_ode(const Options& o) {
    if (std::isnan(o.amplitude))
        throw CLI::ValidationError("--amplitude is required");
    const Real q = parse_real(o.q, "--q");
    const ProblemParams p{o.dim, q.value, parse_lambda(o.lambda, o.dim, q.value)};
    OdeOptions opt;
    opt.nonlinear = !o.linear;
    const IvpResult r = integrate_ivp(p, o.amplitude, ThetaGrid(o.nodes), opt);
    Outcome out;
    out.result = {{"lambda", number(p.lambda)},
                  {"amplitude", number(o.amplitude)},
                  {"reached", r.reached},
                  {"positive", r.positive()},
                  {"blowup", r.blowup},
                  {"first_zero", r.first_zero ? number(*r.first_zero) : json(nullptr)},
                  {"blowup_angle", r.blowup_angle ? number(*r.blowup_angle) : json(nullptr)},
                  {"end_value", number(r.profile.v[r.reached == 0 ? 0 : r.reached - 1])}};
    if (!o.csv.empty())
        write_file(o.csv, [&](std::ostream& f) { write_profile_csv(f, r.profile); });
    return out;
}

Outcome cmd_shoot(const Options& o) {
    const Real q = parse_real(o.q, "--q");
    const ProblemParams p{o.dim, q.value, parse_lambda(o.lambda, o.dim, q.value)};
    const ShootingOutcome r = solve_positive(p, shooting_config(o));
    Outcome out;
    out.result = {{"lambda", number(p.lambda)},
                  {"status", std::string(to_string(r.status))},
                  {"amplitude", r.amplitude ? number(*r.amplitude) : json(nullptr)},
                  {"boundary_residual", number(r.boundary_residual)},
                  {"bracket_width", number(r.bracket_width)},
                  {"scanned", r.scan_log.size()},
                  {"diagnostic", r.diagnostic}};
    if (o.lambda == "ell")
        out.result["regime"] = std::string(to_string(regime_of(o.dim, q)));
    if (!o.csv.empty() && r.profile)
        write_file(o.csv, [&](std::ostream& f) { write_profile_csv(f, *r.profile); });
    out.code = r.status == ShootStatus::Inconclusive ? 3 : 0;
    return out;
}

Outcome cmd_scan(const Options& o) {
    if (o.q_from.empty() || o.q_to.empty())
        throw CLI::ValidationError("--q-from and --q-to are required");
    const double a = parse_real(o.q_from, "--q-from").value;
    const double b = parse_real(o.q_to, "--q-to").value;
    std::vector<double> qs(o.steps);
    for (std::size_t i = 0; i < o.steps; ++i)
        qs[i] = o.steps == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(o.steps - 1);
    const LambdaRule rule =
        o.lambda == "ell" ? LambdaRule::ell() : LambdaRule::fixed(parse_real(o.lambda, "--lambda").value);
    const auto rows = existence_scan(o.dim, qs, rule, shooting_config(o));

    std::ostringstream csv;
    csv << "q,regime,status,amplitude,residual\n";
    json list = json::array();
    int code = 0;
    for (const auto& r : rows) {
        const std::string status = r.error.empty() ? std::string(to_string(r.observed)) : "Error";
        csv << csv_number(r.q) << ',' << to_string(r.predicted) << ',' << status << ','
            << (r.amplitude ? csv_number(*r.amplitude) : std::string()) << ',' << csv_number(r.residual) << '\n';
        list.push_back({{"q", number(r.q)},
                        {"lambda", number(r.lambda)},
                        {"regime", std::string(to_string(r.predicted))},
                        {"status", status},
                        {"amplitude", r.amplitude ? number(*r.amplitude) : json(nullptr)},
                        {"residual", number(r.residual)},
                        {"error", r.error}});
        if (!r.error.empty() || r.observed == ShootStatus::Inconclusive)
            code = 3;
    }
    Outcome out;
    out.result = {{"rows", list}};
    out.code = code;
    if (!o.csv.empty()) {
        write_file(o.csv, [&](std::ostream& f) { f << csv.str(); });
        out.text = std::string();
    } else {
        out.text = csv.str();
    }
    return out;
}

Outcome cmd_verify(const Options& o) {
    const Real q = parse_real(o.q, "--q");
    const ProblemParams p{o.dim, q.value, parse_lambda(o.lambda, o.dim, q.value)};
    const ShootingOutcome s = solve_positive(p, shooting_config(o));
    if (s.status == ShootStatus::Inconclusive)
        throw ConvergenceError("shooting inconclusive: " + s.diagnostic);
    if (s.status != ShootStatus::Solution)
        throw DomainError("no positive profile for these parameters, nothing to verify");
    const RadialProfile& w = *s.profile;

    std::vector<IdentityReport> reports;
    const bool all = o.identity == "all";
    if (all || o.identity == "phi")
        reports.push_back(phi_balance_residual(w, p));
    if (all || o.identity == "pohozaev")
        reports.push_back(pohozaev_residual(w, p));
    if (all || o.identity == "kwongli")
        reports.push_back(kwong_li_residual(w, p, derive_kwong_li_weight(p)));
    if (all || o.identity == "cross")
        reports.push_back(cross_term(w, 1.1 * w, p));

    Outcome out;
    json list = json::array();
    std::string lines;
    for (const auto& r : reports) {
        list.push_back(report_json(r));
        lines += to_json_text(list.back(), -1) + "\n";
    }
    out.result = {{"amplitude", number(*s.amplitude)}, {"reports", list}};
    out.text = lines;
    return out;
}

struct DataSpec {
    std::string kind;
    double scale = 1.0;
};

DataSpec parse_data(const std::string& text, const char* what) {
    static const std::string times = "\xc3\x97"; // ×
    std::string t = text;
    for (auto pos = t.find(times); pos != std::string::npos; pos = t.find(times))
        t.replace(pos, times.size(), "*");
    auto is_kind = [](const std::string& k) { return k == "omega0" || k == "phi" || k == "zero"; };
    DataSpec d;
    const auto star = t.find('*');
    if (star == std::string::npos) {
        if (const auto x = t.rfind('x'); x != std::string::npos && is_kind(t.substr(0, x))) {
            d.kind = t.substr(0, x);
            d.scale = parse_real(t.substr(x + 1), what).value;
        } else {
            d.kind = t;
        }
    } else {
        std::string a = t.substr(0, star), b = t.substr(star + 1);
        if (is_kind(a)) {
            d.kind = a;
            d.scale = parse_real(b, what).value;
        } else {
            d.kind = b;
            d.scale = parse_real(a, what).value;
        }
    }
    if (!is_kind(d.kind))
        throw CLI::ValidationError(std::string(what) + ": expected omega0, phi or zero with an optional scale");
    if (d.scale < 0.0)
        throw CLI::ValidationError(std::string(what) + ": scale must be nonnegative");
    return d;
}

Outcome cmd_cylinder(const Options& o) {
    const Real q = parse_real(o.q, "--q");
    const ProblemParams p{o.dim, q.value, ell(o.dim, q.value)};
    p.validate();
    const CylinderGrid grid{o.T, o.nt, o.ntheta};
    grid.validate();
    const ThetaGrid tg = grid.theta_grid();
    const DataSpec s0 = parse_data(o.g0, "--g0");
    const DataSpec s1 = parse_data(o.g1, "--g1");

    std::optional<RadialProfile> steady;
    auto omega = [&]() -> const RadialProfile& {
        if (!steady) {
            ShootingConfig sc;
            sc.grid = ThetaGrid(o.nodes);
            sc.workers = o.workers;
            RadialProfile seed = resample(omega0(o.dim, q.value, sc), tg);
            seed.v.back() = 0.0;
            steady = discrete_steady_state(p, seed);
        }
        return *steady;
    };
    auto profile = [&](const DataSpec& d) {
        RadialProfile r(tg);
        if (d.kind == "omega0") {
            r = d.scale * omega();
        } else if (d.kind == "phi") {
            for (std::size_t j = 0; j + 1 < tg.size(); ++j)
                r.v[j] = d.scale * std::cos(tg.node(j));
        }
        return r;
    };
    const RadialProfile g0 = profile(s0);
    const RadialProfile g1 = profile(s1);

    CylinderOptions opt;
    opt.newton_tol = o.newton_tol;
    opt.max_newton = o.max_newton;
    opt.guess = o.guess == "linear" ? InitialGuess::Linear : InitialGuess::Blend;
    opt.continuation = o.continuation == "end"    ? Continuation::FromEnd
                       : o.continuation == "zero" ? Continuation::FromZero
                                                  : Continuation::None;
    opt.continuation_steps = o.continuation_steps;

    const CylinderField f = solve_cylinder(p, g0, g1, grid, opt);
    const EnergyTrace tr = energy_trace(f, p);
    const IdentityReport energy = energy_identity_residual(tr, p);

    json history = json::array();
    for (double r : f.residual_history)
        history.push_back(number(r));
    Outcome out;
    out.result = {{"lambda", number(p.lambda)},
                  {"beta", number(damping_coefficient(o.dim, q.value))},
                  {"outside_theory", f.outside_theory},
                  {"newton_iterations", f.newton_iterations},
                  {"residual", number(f.residual)},
                  {"residual_history", history},
                  {"deflated", f.deflated},
                  {"smallest_singular_value", number(f.smallest_singular_value)},
                  {"projected_undershoots", f.projected_undershoots},
                  {"min_before_projection", number(f.min_before_projection)},
                  {"energy_law", report_json(energy)},
                  {"energy_monotone", energy_monotone(tr, p)},
                  {"bound_diagnostic", number(bound_diagnostic(f))},
                  {"mid_profile_max", number(mid_profile(f).max_abs())}};
    const Regime regime = regime_of(o.dim, q);
    if (regime == Regime::UniqueSolution)
        out.result["mid_profile_distance"] = number(mid_profile_distance(f, omega()));
    if (std::abs(q.value - critical_exponents(o.dim).q1) <= 1e-12 && o.T >= 50.0) {
        try {
            const DecayFit fit = critical_decay_fit(f, p);
            out.result["decay_exponent"] = number(fit.exponent);
            out.result["kappa"] = number(fit.kappa);
            out.result["eta_shape_distance"] = number(eta_shape_distance(f, p, 0.75 * o.T));
        } catch (const DomainError& e) {
            out.result["decay_fit_error"] = e.what();
        }
    }
    if (!o.field_csv.empty())
        write_file(o.field_csv, [&](std::ostream& s) { write_field_csv(s, f); });
    if (!o.trace_csv.empty())
        write_file(o.trace_csv, [&](std::ostream& s) { write_trace_csv(s, tr); });
    return out;
}

// Reversed token list as CLI11's vector parse expects.
void parse(CLI::App& app, std::vector<std::string> tokens) {
    std::reverse(tokens.begin(), tokens.end());
    app.parse(tokens);
}

CLI::App* find_sub(CLI::App& app, const std::vector<std::string>& args) {
    if (args.empty())
        return nullptr;
    return app.get_subcommand_no_throw(args.front());
}

} // namespace

RunConfig load_config(const std::string& subcommand, const std::filesystem::path& path) {
    Options o;
    CLI::App app;
    build(app, o);
    CLI::App* sub = app.get_subcommand_no_throw(subcommand);
    if (sub == nullptr)
        throw std::invalid_argument("unknown subcommand " + subcommand);
    std::vector<std::string> tokens{subcommand};
    for (auto& t : file_tokens(sub, read_config_file(path)))
        tokens.push_back(std::move(t));
    parse(app, tokens);
    return echo(sub);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Boundary-singularity profiles of -Lu = u^q: exponents, shooting, identities, cylinder"};
    app.name("bsing");
    build(app, o);

    CLI::App* sub = nullptr;
    try {
        std::optional<std::string> config_path;
        std::vector<std::string> rest = extract_config(args, config_path);
        std::vector<std::string> tokens;
        sub = find_sub(app, rest);
        if (config_path) {
            if (sub == nullptr)
                throw CLI::ValidationError("--config needs a subcommand first");
            std::map<std::string, std::string> values;
            try {
                values = read_config_file(*config_path);
                tokens.push_back(rest.front());
                for (auto& t : file_tokens(sub, values))
                    tokens.push_back(std::move(t));
            } catch (const std::exception& e) {
                throw CLI::ValidationError(e.what());
            }
            tokens.insert(tokens.end(), rest.begin() + 1, rest.end());
        } else {
            tokens = rest;
        }
        parse(app, tokens);
    } catch (const CLI::CallForHelp&) {
        out << (sub ? sub->help() : app.help());
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << (sub ? sub->help() : app.help());
        return 1;
    }

    sub = app.get_subcommands().front();
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
        const std::string name = sub->get_name();
        if (name == "exponents")
            outcome = cmd_exponents(o);
        else if (name == "solve-ode")
            outcome = cmd_solve_ode(o);
        else if (name == "shoot")
            outcome = cmd_shoot(o);
        else if (name == "scan")
            outcome = cmd_scan(o);
        else if (name == "verify")
            outcome = cmd_verify(o);
        else
            outcome = cmd_cylinder(o);
    } catch (const CLI::ValidationError& e) {
        err << "error: " << e.what() << "\n\n" << sub->help();
        return 1;
    } catch (const DomainError& e) {
        err << "domain error: " << e.what() << "\n";
        return 2;
    } catch (const NotDerivedYet& e) {
        err << "not derived: " << e.what() << "\n";
        return 2;
    } catch (const ConvergenceError& e) {
        err << "convergence failure: " << e.what() << "\n";
        return 3;
    } catch (const NumericalFault& e) {
        err << "numerical fault: " << e.what() << "\n";
        return 3;
    } catch (const std::ios_base::failure& e) {
        err << "i/o error: " << e.what() << "\n";
        return 1;
    }

    RunRecord record;
    record.config = echo(sub);
    record.result = outcome.result;
    if (o.timing)
        record.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const std::string text = serialize(record);
    try {
        if (!o.record.empty())
            write_file(o.record, [&](std::ostream& f) { f << text; });
    } catch (const std::ios_base::failure& e) {
        err << "i/o error: " << e.what() << "\n";
        return 1;
    }
    out << (outcome.text ? *outcome.text : text);
    return outcome.code;
}

} // namespace bsing::cli
