// subflow: batch front end for embedded subcartesian spaces, their
// derivations, and maximal (lifted) integral curves.
//
// Exit codes: 0 success, 2 model/usage error, 3 runtime precondition
// error, 4 property-suite failure.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "subflow/checks.hpp"
#include "subflow/common.hpp"
#include "subflow/flow.hpp"
#include "subflow/model.hpp"

using nlohmann::json;
using namespace subflow;

namespace {

constexpr std::uint64_t kDefaultSeed = 12345;

std::uint64_t env_seed() {
    if (const char* s = std::getenv("SUBFLOW_SEED")) {
        try {
            return std::stoull(s);
        } catch (...) {
            std::cerr << "warning: ignoring malformed SUBFLOW_SEED='" << s << "'\n";
        }
    }
    return kDefaultSeed;
}

Vec parse_point(const std::string& text) {
    Vec out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t next = text.find(',', pos);
        std::string tok = text.substr(pos, next == std::string::npos ? next : next - pos);
        try {
            out.push_back(std::stod(tok));
        } catch (...) {
            throw Error("malformed coordinate '" + tok + "' in point '" + text + "'");
        }
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    return out;
}

std::vector<Vec> parse_points(const std::string& text) {
    std::vector<Vec> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t next = text.find(';', pos);
        out.push_back(parse_point(text.substr(pos, next == std::string::npos ? next : next - pos)));
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    return out;
}

std::string fmt_point(const Vec& p) {
    std::string s = "(";
    for (std::size_t i = 0; i < p.size(); ++i) s += (i ? "," : "") + format_double(p[i]);
    return s + ")";
}

int report_model_error(const ModelError& e) {
    for (const auto& d : e.diagnostics) std::cerr << "error: " << d.location << ": " << d.message << "\n";
    return 2;
}

json domain_end_json(const DomainEnd& e) {
    return json{{"t", e.t},
                {"closed", e.closed},
                {"termination", to_string(e.termination)},
                {"restarts", e.restarts},
                {"handoffs", e.handoffs}};
}

struct FlowOptions {
    std::string model_path, derivation, start;
    double t_max = -1, t_min = 0;
    std::string out = "trajectory.csv";
    std::string summary;
    double rtol = -1, atol = -1, band_tol = -1, exit_bisect_tol = -1, probe_h = -1, max_step = -1;
    int max_restarts = -1;
    bool reproject = false;
};

int cmd_flow(const FlowOptions& opt) {
    ModelFile model = load_model(opt.model_path);
    auto it = model.derivations.find(opt.derivation);
    if (it == model.derivations.end()) {
        std::cerr << "error: unknown derivation '" << opt.derivation << "'\n";
        return 2;
    }
    const GlobalDerivation& X = it->second;
    FlowSettings st = model.settings;
    if (opt.rtol > 0) st.rtol = opt.rtol;
    if (opt.atol > 0) st.atol = opt.atol;
    if (opt.band_tol > 0) st.band_tol = opt.band_tol;
    if (opt.exit_bisect_tol > 0) st.exit_bisect_tol = opt.exit_bisect_tol;
    if (opt.probe_h > 0) st.probe_h = opt.probe_h;
    if (opt.max_step > 0) st.max_step = opt.max_step;
    if (opt.max_restarts >= 0) st.max_restarts = opt.max_restarts;
    if (opt.reproject) st.reproject = true;

    Vec start = parse_point(opt.start);
    double fwd = opt.t_max > 0 ? opt.t_max : st.t_budget;
    double back = opt.t_min < 0 ? -opt.t_min : 0.0;

    LiftedCurve curve = maximal_curve(X, start, st, fwd, back);
    write_file_atomic(opt.out, trajectory_csv(curve));

    json summary{{"model", opt.model_path},
                 {"derivation", opt.derivation},
                 {"space", model.space_name(X.space)},
                 {"start", start},
                 {"domain_kind", to_string(curve.curve.domain_kind)},
                 {"left", domain_end_json(curve.curve.left)},
                 {"right", domain_end_json(curve.curve.right)},
                 {"samples", curve.samples.size()},
                 {"max_onspace_residual", curve.max_onspace_residual},
                 {"csv", opt.out}};
    json segs = json::array();
    for (const CurveSegment& seg : curve.curve.segments)
        segs.push_back(json{{"t_start", seg.t_start},
                            {"t_end", seg.t_end},
                            {"extension_id", seg.extension_id},
                            {"samples", seg.samples.size()}});
    summary["segments"] = segs;
    std::string summary_path = opt.summary.empty() ? opt.out + ".summary.json" : opt.summary;
    write_file_atomic(summary_path, summary.dump(2) + "\n");

    std::cout << "flow " << opt.derivation << " from " << fmt_point(start) << ": domain "
              << to_string(curve.curve.domain_kind) << " [" << format_double(curve.curve.left.t)
              << ", " << format_double(curve.curve.right.t) << "] terminations ("
              << to_string(curve.curve.left.termination) << ", "
              << to_string(curve.curve.right.termination) << "); " << curve.samples.size()
              << " samples -> " << opt.out << "\n";
    return 0;
}

int cmd_props(const std::string& model_path, std::uint64_t seed, int samples,
              const std::string& summary_path, bool inject_fault) {
    ModelFile model = load_model(model_path);
    PropsReport rep = run_props(model, seed, samples,
                                inject_fault ? FaultInjection::ChainRuleSign : FaultInjection::None);
    for (const auto& w : rep.warnings) std::cout << "warning: " << w << "\n";
    for (const LawResult& law : rep.laws) {
        std::cout << "law=" << law.law << " cases=" << law.cases
                  << " max_rel=" << format_double(law.max_rel)
                  << " tol=" << format_double(law.tolerance) << (law.pass ? " PASS" : " FAIL")
                  << "\n";
    }
    if (!summary_path.empty()) {
        json laws = json::array();
        for (const LawResult& law : rep.laws)
            laws.push_back(json{{"law", law.law},
                                {"cases", law.cases},
                                {"max_residual", law.max_residual},
                                {"max_rel", law.max_rel},
                                {"tolerance", law.tolerance},
                                {"pass", law.pass}});
        json doc{{"model", model_path}, {"seed", rep.seed},    {"samples", rep.samples},
                 {"laws", laws},        {"warnings", rep.warnings}, {"pass", rep.pass}};
        write_file_atomic(summary_path, doc.dump(2) + "\n");
    }
    if (!rep.pass) {
        for (const LawResult& law : rep.laws)
            if (!law.pass) std::cerr << "property failure: " << law.law << "\n";
        return 4;
    }
    return 0;
}

int cmd_bracket(const std::string& model_path, const std::string& xname, const std::string& yname,
                const std::string& at) {
    ModelFile model = load_model(model_path);
    auto xi = model.derivations.find(xname);
    auto yi = model.derivations.find(yname);
    if (xi == model.derivations.end() || yi == model.derivations.end()) {
        std::cerr << "error: unknown derivation '" << (xi == model.derivations.end() ? xname : yname)
                  << "'\n";
        return 2;
    }
    const GlobalDerivation& X = xi->second;
    const GlobalDerivation& Y = yi->second;
    if (X.space != Y.space) {
        std::cerr << "error: derivations live on different spaces\n";
        return 2;
    }
    GlobalDerivation B = lie_bracket(X, Y);
    std::cout << "[" << xname << "," << yname << "] coefficients:\n";
    for (std::size_t i = 0; i < B.coefficients.size(); ++i)
        std::cout << "  F" << i + 1 << " = " << emit(B.coefficients[i]) << "\n";

    std::vector<Vec> points =
        at.empty() ? sample(*X.space, 3, env_seed()) : parse_points(at);
    SmoothFunction probe = model.functions.empty()
                               ? restrict_to(X.space, parse("x1", X.space->ambient_dim))
                               : model.functions.begin()->second;
    if (probe.space != X.space)
        probe = restrict_to(X.space, parse("x1", X.space->ambient_dim));
    bool ok = true;
    for (const Vec& p : points) {
        std::cout << "  at " << fmt_point(p) << ":";
        for (const auto& c : B.coefficients) std::cout << " " << format_double(eval(c, p));
        Residual r = bracket_agreement_residual(X, Y, probe, p);
        std::cout << "  nested-apply residual " << format_double(r.value) << "\n";
        ok = ok && r.within(1e-10);
    }
    if (!ok) {
        std::cerr << "property failure: bracket-agreement\n";
        return 4;
    }
    return 0;
}

int cmd_push(const std::string& model_path, const std::string& map_name, const std::string& at,
             const std::string& vector) {
    ModelFile model = load_model(model_path);
    auto mi = model.maps.find(map_name);
    if (mi == model.maps.end()) {
        std::cerr << "error: unknown map '" << map_name << "'\n";
        return 2;
    }
    const SmoothMap& phi = mi->second;
    PointDerivation v = make_point_derivation(phi.source, parse_point(at), parse_point(vector));
    PointDerivation tv = pushforward(phi, v);
    std::cout << "push " << map_name << ": base " << fmt_point(tv.base) << " vector "
              << fmt_point(tv.vector) << "\n";
    bool ok = true;
    for (const auto& [fname, f] : model.functions) {
        if (f.space != phi.target) continue;
        Residual r = pushforward_residual(phi, v, f);
        std::cout << "  defining-property residual vs '" << fname
                  << "': " << format_double(r.value) << "\n";
        ok = ok && r.within(1e-10);
    }
    if (!ok) {
        std::cerr << "property failure: pushforward\n";
        return 4;
    }
    return 0;
}

int cmd_tangent(const std::string& model_path, const std::string& space_name, const std::string& at,
                const std::string& vector, int steps) {
    ModelFile model = load_model(model_path);
    auto si = model.spaces.find(space_name);
    if (si == model.spaces.end()) {
        std::cerr << "error: unknown space '" << space_name << "'\n";
        return 2;
    }
    Vec x = parse_point(at), v = parse_point(vector);
    if (!contains(*si->second, x, si->second->membership_tol))
        throw PreconditionError("probe point is off the space");
    TangencyReport rep = tangency_probe(*si->second, x, v, steps);
    std::cout << "tangency probe at " << fmt_point(x) << " direction " << fmt_point(v) << ":\n";
    std::cout << "  residual/|t| ratios:";
    for (double r : rep.ratios) std::cout << " " << format_double(r);
    std::cout << "\n  classification: "
              << (rep.classification == Tangency::Tangent ? "TANGENT" : "OBSTRUCTED") << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"embedded subcartesian spaces, derivations, and maximal integral curves"};
    app.require_subcommand(1);

    std::string model_path;

    auto* validate = app.add_subcommand("validate", "load and fully validate a model file");
    validate->add_option("model", model_path, "model JSON file")->required();

    FlowOptions fopt;
    auto* flow = app.add_subcommand("flow", "construct a maximal lifted integral curve");
    flow->add_option("model", fopt.model_path, "model JSON file")->required();
    flow->add_option("derivation", fopt.derivation, "derivation name")->required();
    flow->add_option("--start", fopt.start, "start point, e.g. 1,0")->required();
    flow->add_option("--t-max", fopt.t_max, "forward parameter budget");
    flow->add_option("--t-min", fopt.t_min, "backward parameter limit (<= 0)");
    flow->add_option("--out", fopt.out, "trajectory CSV path");
    flow->add_option("--summary", fopt.summary, "summary JSON path");
    flow->add_option("--rtol", fopt.rtol, "integrator relative tolerance");
    flow->add_option("--atol", fopt.atol, "integrator absolute tolerance");
    flow->add_option("--band-tol", fopt.band_tol, "on-space acceptance band");
    flow->add_option("--exit-bisect-tol", fopt.exit_bisect_tol, "exit bisection tolerance");
    flow->add_option("--probe-h", fopt.probe_h, "blocked-direction probe step");
    flow->add_option("--max-step", fopt.max_step, "maximum integrator step");
    flow->add_option("--max-restarts", fopt.max_restarts, "restart attempts per direction");
    flow->add_flag("--reproject", fopt.reproject, "re-project samples onto the space");

    std::uint64_t seed = env_seed();
    int samples = 24;
    std::string summary_path;
    bool inject_fault = false;
    auto* props = app.add_subcommand("props", "run every residual law sweep on the model");
    props->add_option("model", model_path, "model JSON file")->required();
    props->add_option("--seed", seed, "random seed (default: SUBFLOW_SEED or 12345)");
    props->add_option("--samples", samples, "sample points per space");
    props->add_option("--summary", summary_path, "summary JSON path");
    props->add_flag("--inject-chain-fault", inject_fault)->group(""); // test harness hook

    std::string xname, yname, at, vector;
    auto* bracket = app.add_subcommand("bracket", "Lie bracket of two derivations");
    bracket->add_option("model", model_path, "model JSON file")->required();
    bracket->add_option("X", xname, "first derivation")->required();
    bracket->add_option("Y", yname, "second derivation")->required();
    bracket->add_option("--at", at, "evaluation points, e.g. 1,0;0,1");

    auto* push = app.add_subcommand("push", "pushforward of a tangent vector through a map");
    push->add_option("model", model_path, "model JSON file")->required();
    push->add_option("map", xname, "map name")->required();
    push->add_option("--at", at, "base point")->required();
    push->add_option("--vector", vector, "tangent vector")->required();

    int steps = 8;
    auto* tangent = app.add_subcommand("tangent", "tangency probe for a direction at a point");
    tangent->add_option("model", model_path, "model JSON file")->required();
    tangent->add_option("space", xname, "space name")->required();
    tangent->add_option("--at", at, "base point")->required();
    tangent->add_option("--vector", vector, "direction")->required();
    tangent->add_option("--steps", steps, "number of halvings");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (validate->parsed()) {
            ModelFile model = load_model(model_path);
            std::cout << "model OK: spaces=" << model.spaces.size()
                      << " derivations=" << model.derivations.size()
                      << " maps=" << model.maps.size()
                      << " functions=" << model.functions.size() << "\n";
            return 0;
        }
        if (flow->parsed()) return cmd_flow(fopt);
        if (props->parsed()) return cmd_props(model_path, seed, samples, summary_path, inject_fault);
        if (bracket->parsed()) return cmd_bracket(model_path, xname, yname, at);
        if (push->parsed()) return cmd_push(model_path, xname, at, vector);
        if (tangent->parsed()) return cmd_tangent(model_path, xname, at, vector, steps);
    } catch (const ModelError& e) {
        return report_model_error(e);
    } catch (const PreconditionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
