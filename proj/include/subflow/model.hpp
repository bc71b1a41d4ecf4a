#pragma once

// Model files: named spaces, derivations, maps and functions in one JSON
// document, fully validated at load (expression parsing, arities, name
// resolution, atlas agreement, map images). Loading either returns a
// usable model or throws a ModelError carrying one diagnostic per
// failure, each with a location path into the document.

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "subflow/common.hpp"
#include "subflow/deriv.hpp"
#include "subflow/expr.hpp"
#include "subflow/flow.hpp"
#include "subflow/space.hpp"

namespace subflow {

struct Diagnostic {
    std::string location;
    std::string message;
};

struct ModelError : Error {
    std::vector<Diagnostic> diagnostics;
    explicit ModelError(std::vector<Diagnostic> diags)
        : Error(render(diags)), diagnostics(std::move(diags)) {}

private:
    static std::string render(const std::vector<Diagnostic>& diags) {
        std::string s = "model validation failed:";
        for (const auto& d : diags) s += "\n  " + d.location + ": " + d.message;
        return s;
    }
};

struct ModelFile {
    std::map<std::string, SpacePtr> spaces;
    std::map<std::string, GlobalDerivation> derivations;
    std::map<std::string, SmoothMap> maps;
    std::map<std::string, SmoothFunction> functions;
    FlowSettings settings;
    double agreement_tol = kDefaultAgreementTol;

    std::string space_name(const SpacePtr& s) const {
        for (const auto& [name, sp] : spaces)
            if (sp == s) return name;
        return "?";
    }
};

namespace detail {

using nlohmann::json;

struct ModelLoader {
    std::vector<Diagnostic> diags;

    void fail(const std::string& loc, const std::string& msg) { diags.push_back({loc, msg}); }

    ScalarExpr expr_at(const json& j, const std::string& loc, int arity, bool& ok) {
        if (!j.is_string()) {
            fail(loc, "expected an expression string");
            ok = false;
            return ScalarExpr{ast::lit(0), std::max(arity, 1)};
        }
        try {
            return parse(j.get<std::string>(), arity);
        } catch (const Error& e) {
            fail(loc, e.what());
            ok = false;
            return ScalarExpr{ast::lit(0), std::max(arity, 1)};
        }
    }

    ConstraintPiece piece_at(const json& j, const std::string& loc, int arity, bool& ok) {
        ConstraintPiece pc;
        if (!j.is_object()) {
            fail(loc, "expected an object with 'eq'/'ineq' arrays");
            ok = false;
            return pc;
        }
        for (const char* key : {"eq", "ineq"}) {
            if (!j.contains(key)) continue;
            const json& arr = j.at(key);
            if (!arr.is_array()) {
                fail(loc + "." + key, "expected an array of expression strings");
                ok = false;
                continue;
            }
            for (std::size_t i = 0; i < arr.size(); ++i) {
                ScalarExpr e = expr_at(arr[i], loc + "." + key + "[" + std::to_string(i) + "]",
                                       arity, ok);
                (std::string(key) == "eq" ? pc.equalities : pc.inequalities).push_back(e);
            }
        }
        return pc;
    }

    ModelFile load(const json& doc) {
        ModelFile model;

        if (doc.contains("settings")) parse_settings(doc.at("settings"), model);

        if (doc.contains("spaces")) {
            for (const auto& [name, js] : doc.at("spaces").items())
                load_space(name, js, model);
        }
        if (doc.contains("functions")) {
            for (const auto& [name, jf] : doc.at("functions").items())
                load_function(name, jf, model);
        }
        if (doc.contains("derivations")) {
            for (const auto& [name, jd] : doc.at("derivations").items())
                load_derivation(name, jd, model);
        }
        if (doc.contains("maps")) {
            for (const auto& [name, jm] : doc.at("maps").items())
                load_map(name, jm, model);
        }
        if (model.spaces.empty()) fail("spaces", "model defines no spaces");

        if (!diags.empty()) throw ModelError(std::move(diags));
        return model;
    }

    void parse_settings(const json& js, ModelFile& model) {
        const std::string loc = "settings";
        if (!js.is_object()) {
            fail(loc, "expected an object");
            return;
        }
        auto num = [&](const char* key, double& out) {
            if (!js.contains(key)) return;
            if (!js.at(key).is_number()) {
                fail(loc + "." + key, "expected a number");
                return;
            }
            out = js.at(key).get<double>();
        };
        FlowSettings& st = model.settings;
        num("rtol", st.rtol);
        num("atol", st.atol);
        num("band_tol", st.band_tol);
        num("exit_bisect_tol", st.exit_bisect_tol);
        num("t_budget", st.t_budget);
        num("probe_h", st.probe_h);
        num("max_step", st.max_step);
        num("agreement_tol", model.agreement_tol);
        if (js.contains("max_restarts")) {
            if (js.at("max_restarts").is_number_integer())
                st.max_restarts = js.at("max_restarts").get<int>();
            else
                fail(loc + ".max_restarts", "expected an integer");
        }
        if (js.contains("reproject")) {
            if (js.at("reproject").is_boolean())
                st.reproject = js.at("reproject").get<bool>();
            else
                fail(loc + ".reproject", "expected a boolean");
        }
        try {
            st.validate();
        } catch (const Error& e) {
            fail(loc, e.what());
        }
    }

    void load_space(const std::string& name, const json& js, ModelFile& model) {
        const std::string loc = "spaces." + name;
        bool ok = true;
        if (!js.is_object() || !js.contains("dim") || !js.at("dim").is_number_integer()) {
            fail(loc, "space needs an integer 'dim'");
            return;
        }
        int dim = js.at("dim").get<int>();
        if (dim < 1) {
            fail(loc + ".dim", "ambient dimension must be positive");
            return;
        }
        std::vector<ConstraintPiece> pieces;
        if (js.contains("pieces")) {
            const json& arr = js.at("pieces");
            if (!arr.is_array()) {
                fail(loc + ".pieces", "expected an array");
                ok = false;
            } else {
                for (std::size_t i = 0; i < arr.size(); ++i)
                    pieces.push_back(
                        piece_at(arr[i], loc + ".pieces[" + std::to_string(i) + "]", dim, ok));
            }
        }
        std::vector<Vec> points;
        if (js.contains("points")) {
            for (std::size_t i = 0; i < js.at("points").size(); ++i) {
                const json& jp = js.at("points")[i];
                if (!jp.is_array() || static_cast<int>(jp.size()) != dim) {
                    fail(loc + ".points[" + std::to_string(i) + "]",
                         "expected an array of " + std::to_string(dim) + " numbers");
                    ok = false;
                    continue;
                }
                points.push_back(jp.get<Vec>());
            }
        }
        double tol = js.value("membership_tol", 1e-9);
        std::optional<Box> box;
        if (js.contains("box")) {
            const json& jb = js.at("box");
            if (!jb.is_array() || static_cast<int>(jb.size()) != dim) {
                fail(loc + ".box", "expected one [lo,hi] pair per dimension");
                ok = false;
            } else {
                Box b;
                for (const json& pair : jb) {
                    if (!pair.is_array() || pair.size() != 2) {
                        fail(loc + ".box", "expected one [lo,hi] pair per dimension");
                        ok = false;
                        break;
                    }
                    b.lo.push_back(pair[0].get<double>());
                    b.hi.push_back(pair[1].get<double>());
                }
                if (b.lo.size() == static_cast<std::size_t>(dim)) box = b;
            }
        }
        if (!ok) return;
        try {
            model.spaces[name] = make_space(dim, std::move(pieces), std::move(points), tol, box, name);
        } catch (const Error& e) {
            fail(loc, e.what());
        }
    }

    SpacePtr resolve_space(const std::string& ref, const std::string& loc, ModelFile& model) {
        auto it = model.spaces.find(ref);
        if (it == model.spaces.end()) {
            fail(loc, "unknown space '" + ref + "'");
            return nullptr;
        }
        return it->second;
    }

    void load_function(const std::string& name, const json& jf, ModelFile& model) {
        const std::string loc = "functions." + name;
        if (!jf.is_object() || !jf.contains("space") || !jf.contains("expr")) {
            fail(loc, "function needs 'space' and 'expr'");
            return;
        }
        SpacePtr s = resolve_space(jf.at("space").get<std::string>(), loc + ".space", model);
        if (!s) return;
        bool ok = true;
        ScalarExpr e = expr_at(jf.at("expr"), loc + ".expr", s->ambient_dim, ok);
        if (ok) model.functions.emplace(name, SmoothFunction{e, s});
    }

    void load_derivation(const std::string& name, const json& jd, ModelFile& model) {
        const std::string loc = "derivations." + name;
        if (!jd.is_object() || !jd.contains("space") || !jd.contains("coefficients")) {
            fail(loc, "derivation needs 'space' and 'coefficients'");
            return;
        }
        SpacePtr s = resolve_space(jd.at("space").get<std::string>(), loc + ".space", model);
        if (!s) return;
        int n = s->ambient_dim;
        bool ok = true;
        auto coeff_list = [&](const json& arr, const std::string& cloc) {
            std::vector<ScalarExpr> out;
            if (!arr.is_array() || static_cast<int>(arr.size()) != n) {
                fail(cloc, "expected " + std::to_string(n) + " coefficient expressions");
                ok = false;
                return out;
            }
            for (std::size_t i = 0; i < arr.size(); ++i)
                out.push_back(expr_at(arr[i], cloc + "[" + std::to_string(i) + "]", n, ok));
            return out;
        };
        std::vector<ScalarExpr> coeffs = coeff_list(jd.at("coefficients"), loc + ".coefficients");
        std::vector<AtlasEntry> atlas;
        if (jd.contains("atlas")) {
            const json& ja = jd.at("atlas");
            if (!ja.is_array()) {
                fail(loc + ".atlas", "expected an array");
                ok = false;
            } else {
                for (std::size_t a = 0; a < ja.size(); ++a) {
                    const std::string aloc = loc + ".atlas[" + std::to_string(a) + "]";
                    if (!ja[a].is_object() || !ja[a].contains("region") ||
                        !ja[a].contains("coefficients")) {
                        fail(aloc, "atlas entry needs 'region' and 'coefficients'");
                        ok = false;
                        continue;
                    }
                    AtlasEntry entry;
                    entry.region = piece_at(ja[a].at("region"), aloc + ".region", n, ok);
                    entry.coefficients = coeff_list(ja[a].at("coefficients"), aloc + ".coefficients");
                    atlas.push_back(std::move(entry));
                }
            }
        }
        if (!ok) return;
        try {
            model.derivations.emplace(
                name, make_global_derivation(s, std::move(coeffs), std::move(atlas),
                                             model.agreement_tol));
        } catch (const Error& e) {
            fail(loc, e.what());
        }
    }

    void load_map(const std::string& name, const json& jm, ModelFile& model) {
        const std::string loc = "maps." + name;
        if (!jm.is_object() || !jm.contains("source") || !jm.contains("target") ||
            !jm.contains("components")) {
            fail(loc, "map needs 'source', 'target' and 'components'");
            return;
        }
        SpacePtr src = resolve_space(jm.at("source").get<std::string>(), loc + ".source", model);
        SpacePtr tgt = resolve_space(jm.at("target").get<std::string>(), loc + ".target", model);
        if (!src || !tgt) return;
        bool ok = true;
        std::vector<ScalarExpr> comps;
        const json& arr = jm.at("components");
        if (!arr.is_array() || static_cast<int>(arr.size()) != tgt->ambient_dim) {
            fail(loc + ".components",
                 "expected " + std::to_string(tgt->ambient_dim) + " component expressions");
            return;
        }
        for (std::size_t i = 0; i < arr.size(); ++i)
            comps.push_back(
                expr_at(arr[i], loc + ".components[" + std::to_string(i) + "]", src->ambient_dim, ok));
        if (!ok) return;
        double vtol = jm.value("validation_tol", 1e-8);
        try {
            model.maps.emplace(name, make_smooth_map(src, tgt, std::move(comps), vtol));
        } catch (const Error& e) {
            fail(loc, e.what());
        }
    }
};

} // namespace detail

inline ModelFile parse_model(const nlohmann::json& doc) {
    detail::ModelLoader loader;
    return loader.load(doc);
}

inline ModelFile load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ModelError({{path, "cannot open file"}});
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ModelError({{path, std::string("JSON parse error: ") + e.what()}});
    }
    return parse_model(doc);
}

// Temp-file-plus-rename so consumers never observe partial output.
inline void write_file_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write to " + tmp.string());
        out << content;
    }
    fs::rename(tmp, target);
}

} // namespace subflow
