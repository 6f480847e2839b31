#include "cli.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

using namespace bsing::cli;
using nlohmann::json;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run invoke(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run(args, out, err);
    return {code, out.str(), err.str()};
}

std::filesystem::path temp_file(const std::string& name, const std::string& content = {}) {
    const auto dir = std::filesystem::temp_directory_path() / "bsing_cli_tests";
    std::filesystem::create_directories(dir);
    const auto path = dir / name;
    std::ofstream(path) << content;
    return path;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("exponents for N = 4") {
    const auto r = invoke({"exponents", "--dim", "4"});
    REQUIRE(r.code == 0);
    const auto rec = parse_record(r.out);
    CHECK(rec.config.subcommand == "exponents");
    CHECK(rec.result["q1"].get<double>() == doctest::Approx(5.0 / 3.0).epsilon(1e-15));
    CHECK(rec.result["q2"].get<double>() == 3.0);
    CHECK(rec.result["q3"].get<double>() == 5.0);
    CHECK_FALSE(rec.result.contains("regime"));
}

TEST_CASE("exponents with a rational q classify exactly") {
    const auto r = parse_record(invoke({"exponents", "--dim", "4", "--q", "5/3"}).out);
    CHECK(r.result["regime"] == "SubcriticalNoSolution");
    CHECK(r.result["ell"].get<double>() == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(r.result["beta"].get<double>() == doctest::Approx(-4.0).epsilon(1e-12));
    const auto s = parse_record(invoke({"exponents", "--dim", "4", "--q", "5"}).out);
    CHECK(s.result["regime"] == "SupercriticalNoSolution");
}

TEST_CASE("supercritical shoot certifies nonexistence with exit 0") {
    const auto r = invoke({"shoot", "--dim", "4", "--q", "5", "--lambda", "ell"});
    CHECK(r.code == 0);
    CHECK(parse_record(r.out).result["status"] == "NonexistenceCertified");
}

TEST_CASE("verify pohozaev prints one JSON report per line") {
    const auto r = invoke({"verify", "--dim", "4", "--q", "2", "--lambda", "0", "--identity", "pohozaev"});
    REQUIRE(r.code == 0);
    CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 1);
    const auto j = json::parse(r.out);
    CHECK(j["name"] == "pohozaev");
    CHECK(j["relative_residual"].get<double>() <= 1e-5);

    const auto all = invoke({"verify", "--dim", "4", "--q", "2", "--lambda", "0"});
    REQUIRE(all.code == 0);
    CHECK(std::count(all.out.begin(), all.out.end(), '\n') == 4);
}

TEST_CASE("verify without a solution is a regime error") {
    CHECK(invoke({"verify", "--dim", "4", "--q", "5", "--lambda", "ell"}).code == 2);
}

TEST_CASE("malformed invocations exit 1 with usage on stderr") {
    for (const std::vector<std::string>& args :
         {std::vector<std::string>{"shoot", "--bogus"}, {"nope"}, {}, {"shoot", "--samples", "x"},
          {"shoot", "--tol", "0"}, {"verify", "--identity", "other"}, {"cylinder", "--g0", "psi*2"},
          {"shoot", "--config"}}) {
        CAPTURE(args.size());
        const auto r = invoke(args);
        CHECK(r.code == 1);
        CHECK(r.out.empty());
        CHECK(r.err.find("Usage") != std::string::npos);
    }
}

TEST_CASE("help and version exit 0") {
    CHECK(invoke({"--help"}).code == 0);
    const auto h = invoke({"shoot", "--help"});
    CHECK(h.code == 0);
    CHECK(h.out.find("--scan-min") != std::string::npos);
    CHECK(invoke({"--version"}).out == std::string(kVersion) + "\n");
}

TEST_CASE("precondition errors exit 2") {
    CHECK(invoke({"exponents", "--dim", "3"}).code == 2);
    CHECK(invoke({"shoot", "--dim", "4", "--q", "0.5", "--lambda", "0"}).code == 2);
}

TEST_CASE("solver failure exits 3") {
    const auto r = invoke({"cylinder", "--dim", "4", "--q", "2", "--T", "20", "--nt", "64", "--ntheta", "66",
                           "--max-newton", "1", "--g0", "phi*3", "--g1", "zero"});
    CHECK(r.code == 3);
    CHECK(r.err.find("convergence") != std::string::npos);
}

TEST_CASE("empty config file gives all defaults") {
    const auto empty = temp_file("empty.cfg");
    const auto from_file = load_config("shoot", empty);
    const auto rec = parse_record(invoke({"shoot", "--dim", "4", "--q", "5", "--samples", "20"}).out);
    CHECK(from_file.subcommand == "shoot");
    CHECK(from_file.values.at("tol") == rec.config.values.at("tol"));
    CHECK(from_file.values.at("scan-min") == rec.config.values.at("scan-min"));
    CHECK(from_file.values.at("lambda") == "ell");
    CHECK(from_file.values.at("nodes") == "4096");
}

TEST_CASE("flags override file values") {
    const auto cfg = temp_file("tol.cfg", "# shooting\ntol = 1e-10\nsamples = 30\n");
    CHECK(load_config("shoot", cfg).values.at("tol") == "1e-10");
    const auto r = invoke({"shoot", "--config", cfg.string(), "--dim", "4", "--q", "5", "--tol", "1e-8"});
    REQUIRE(r.code == 0);
    const auto rec = parse_record(r.out);
    CHECK(rec.config.values.at("tol") == "1e-8");
    CHECK(rec.config.values.at("samples") == "30");
}

TEST_CASE("unknown config keys are named") {
    const auto cfg = temp_file("typo.cfg", "tolr = 1e-10\n");
    try {
        load_config("shoot", cfg);
        FAIL("expected an error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("tolr") != std::string::npos);
    }
    const auto r = invoke({"shoot", "--config", cfg.string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("tolr") != std::string::npos);
}

TEST_CASE("boolean keys in config files") {
    const auto on = temp_file("linear.cfg", "linear = true\namplitude = 1\nlambda = 2\n");
    const auto rec = parse_record(invoke({"solve-ode", "--config", on.string(), "--dim", "4"}).out);
    CHECK(rec.config.values.at("linear") == "true");
    CHECK(rec.result["positive"] == true);
    const auto bad = temp_file("badbool.cfg", "linear = maybe\n");
    CHECK(invoke({"solve-ode", "--config", bad.string()}).code == 1);
}

TEST_CASE("identical configs give byte-identical output") {
    const std::vector<std::string> args{"shoot", "--dim", "4", "--q", "3", "--samples", "80"};
    const auto a = invoke(args);
    const auto b = invoke(args);
    REQUIRE(a.code == 0);
    CHECK(a.out == b.out);
    CHECK(a.out.find("wall_time") == std::string::npos);
    auto with_workers = args;
    with_workers.insert(with_workers.end(), {"--workers", "3"});
    auto rec = parse_record(invoke(with_workers).out);
    auto base = parse_record(a.out);
    CHECK(rec.result == base.result);
}

TEST_CASE("timing adds a wall time") {
    const auto rec = parse_record(invoke({"exponents", "--dim", "5", "--timing"}).out);
    REQUIRE(rec.wall_time);
    CHECK(*rec.wall_time >= 0.0);
}

TEST_CASE("record file matches stdout") {
    const auto path = temp_file("record.json");
    const auto r = invoke({"exponents", "--dim", "6", "--record", path.string()});
    REQUIRE(r.code == 0);
    CHECK(slurp(path) == r.out);
    CHECK(invoke({"exponents", "--dim", "6", "--record", "/nonexistent/dir/x.json"}).code == 1);
}

TEST_CASE("run record round trip") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> mant(-1.0, 1.0);
    std::uniform_int_distribution<int> expo(-300, 300);
    for (int i = 0; i < 200; ++i) {
        RunRecord r;
        r.config.subcommand = "cylinder";
        r.config.values = {{"T", "20"}, {"g0", "omega0*2"}};
        r.wall_time = std::ldexp(std::abs(mant(rng)), expo(rng) / 10);
        json arr = json::array();
        for (int k = 0; k < 5; ++k)
            arr.push_back(number(std::ldexp(mant(rng), expo(rng))));
        r.result = {{"values", arr},
                    {"n", i},
                    {"flag", i % 2 == 0},
                    {"nan", number(std::numeric_limits<double>::quiet_NaN())},
                    {"inf", number(-std::numeric_limits<double>::infinity())},
                    {"none", nullptr},
                    {"whole", number(3.0)}};
        const auto text = serialize(r);
        const auto back = parse_record(text);
        CHECK(back == r);
        CHECK(serialize(back) == text);
    }
    CHECK(std::isnan(number_value(number(std::nan("")))));
    CHECK(number_value("inf") == std::numeric_limits<double>::infinity());
}

TEST_CASE("JSON numbers carry 17 significant digits") {
    CHECK(to_json_text(json(0.1), -1) == "0.10000000000000001");
    CHECK(to_json_text(json(2.0), -1) == "2.0");
    CHECK(to_json_text(json{{"a", 1}}, -1) == "{\"a\":1}");
}

TEST_CASE("scan writes the CSV table") {
    const auto r = invoke({"scan", "--dim", "4", "--q-from", "1.2", "--q-to", "6", "--steps", "3", "--samples",
                           "100", "--nodes", "1024"});
    REQUIRE(r.code == 0);
    std::istringstream in(r.out);
    std::string line;
    std::getline(in, line);
    CHECK(line == "q,regime,status,amplitude,residual");
    std::getline(in, line);
    CHECK(line.rfind("1.2,SubcriticalNoSolution,NonexistenceCertified,,", 0) == 0);
    std::getline(in, line);
    CHECK(line.find("UniqueSolution,Solution,") != std::string::npos);
    std::getline(in, line);
    CHECK(line.rfind("6.0,SupercriticalNoSolution,NonexistenceCertified,,", 0) == 0);
}

TEST_CASE("solve-ode writes a profile") {
    const auto csv = temp_file("profile.csv");
    const auto r = invoke({"solve-ode", "--dim", "4", "--q", "2", "--lambda", "0", "--amplitude", "1000",
                           "--nodes", "512", "--csv", csv.string()});
    REQUIRE(r.code == 0);
    const auto rec = parse_record(r.out);
    CHECK_FALSE(rec.result["first_zero"].is_null());
    CHECK(slurp(csv).rfind("theta,v,dv\n", 0) == 0);
    CHECK(invoke({"solve-ode", "--dim", "4"}).code == 1);
}

TEST_CASE("cylinder data specs and outputs") {
    const auto field = temp_file("field.csv");
    const auto trace = temp_file("trace.csv");
    const auto r = invoke({"cylinder", "--dim", "4", "--q", "2", "--T", "3", "--nt", "65", "--ntheta", "66",
                           "--g0", "omega0\xc3\x97" "1.2", "--g1", "1*omega0", "--field-csv", field.string(),
                           "--trace-csv", trace.string()});
    REQUIRE(r.code == 0);
    const auto rec = parse_record(r.out);
    CHECK(rec.result["residual"].get<double>() <= 1e-8);
    CHECK(rec.result["energy_monotone"] == true);
    CHECK(rec.result.contains("mid_profile_distance"));
    CHECK_FALSE(rec.result.contains("decay_exponent"));
    CHECK(slurp(field).rfind("t,theta,w\n", 0) == 0);
    CHECK(slurp(trace).rfind("t,H,kinetic\n", 0) == 0);
    const auto z = invoke({"cylinder", "--dim", "4", "--q", "2", "--T", "3", "--nt", "64", "--ntheta", "66",
                           "--g0", "zero", "--g1", "phi*0"});
    REQUIRE(z.code == 0);
    CHECK(parse_record(z.out).result["mid_profile_max"].get<double>() == 0.0);
}

}
