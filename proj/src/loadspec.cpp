#include "tslim/loadspec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "tslim/errors.hpp"
#include "tslim/trajectory.hpp"

namespace tslim {

using nlohmann::json;

std::pair<std::size_t, std::size_t> LoadComposition::group(std::size_t g) const {
    const std::size_t b = group_start[g];
    const std::size_t e = (g + 1 < group_start.size()) ? group_start[g + 1] : num.size();
    return {b, e};
}

std::vector<double> LoadComposition::fractions() const {
    std::vector<double> out(num.size());
    for (std::size_t i = 0; i < num.size(); ++i) out[i] = f(i);
    return out;
}

void LoadComposition::validate() const {
    if (labels.size() != num.size()) {
        throw ValidationError("composition labels/fractions size mismatch");
    }
    for (std::size_t g = 0; g < n_groups(); ++g) {
        auto [b, e] = group(g);
        long long sum = 0;
        for (std::size_t i = b; i < e; ++i) {
            if (num[i] < 0 || num[i] > kFractionDen) {
                throw ValidationError("composition fraction out of [0,1]: " + labels[i]);
            }
            sum += num[i];
        }
        if (sum != kFractionDen) {
            throw ValidationError("composition group does not sum to 1");
        }
    }
}

LoadComposition LoadComposition::uniform(std::vector<std::string> labels,
                                         std::vector<std::size_t> group_start) {
    LoadComposition c;
    c.labels = std::move(labels);
    c.group_start = std::move(group_start);
    c.num.assign(c.labels.size(), 0);
    for (std::size_t g = 0; g < c.n_groups(); ++g) {
        auto [b, e] = c.group(g);
        const std::size_t n = e - b;
        const long long base = kFractionDen / static_cast<long long>(n);
        long long rem = kFractionDen - base * static_cast<long long>(n);
        for (std::size_t i = b; i < e; ++i) {
            c.num[i] = base + (rem > 0 ? 1 : 0);
            if (rem > 0) --rem;
        }
    }
    return c;
}

LoadComposition LoadComposition::from_fractions(std::vector<std::string> labels,
                                                const std::vector<double>& f,
                                                std::vector<std::size_t> group_start) {
    LoadComposition c;
    c.labels = std::move(labels);
    c.group_start = std::move(group_start);
    c.num.assign(f.size(), 0);
    for (std::size_t g = 0; g < c.n_groups(); ++g) {
        auto [b, e] = c.group(g);
        double fsum = 0.0;
        for (std::size_t i = b; i < e; ++i) fsum += f[i];
        if (std::abs(fsum - 1.0) > 1e-9) {
            throw ValidationError("fractions do not form a simplex");
        }
        // largest-remainder rounding keeps the group sum exact
        long long assigned = 0;
        std::vector<std::pair<double, std::size_t>> rema;
        for (std::size_t i = b; i < e; ++i) {
            const double exact = f[i] * static_cast<double>(kFractionDen);
            const long long fl = static_cast<long long>(std::floor(exact));
            c.num[i] = fl;
            assigned += fl;
            rema.push_back({exact - static_cast<double>(fl), i});
        }
        long long missing = kFractionDen - assigned;
        std::stable_sort(rema.begin(), rema.end(), [](const auto& a, const auto& b2) {
            return a.first > b2.first;
        });
        for (std::size_t k = 0; missing > 0 && k < rema.size(); ++k, --missing) {
            c.num[rema[k].second] += 1;
        }
        // double rounding can overshoot by a count or two; trim from the
        // smallest remainders upward
        for (std::size_t k = rema.size(); missing < 0 && k-- > 0;) {
            if (c.num[rema[k].second] > 0) {
                c.num[rema[k].second] -= 1;
                ++missing;
            }
        }
        if (missing != 0) throw ValidationError("fractions do not form a simplex");
    }
    c.validate();
    return c;
}

void ZipParams::validate() const {
    const double sp = p1c + p2c + p3c;
    const double sq = q1c + q2c + q3c;
    if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9) {
        throw ValidationError("zip fractions must each sum to 1");
    }
    for (double v : {p1c, p2c, p3c, q1c, q2c, q3c}) {
        if (v < -1e-12 || v > 1.0 + 1e-12) {
            throw ValidationError("zip fraction outside [0,1]");
        }
    }
    if (v0 <= 0.0) throw ValidationError("zip reference voltage must be positive");
}

void ImParams::validate() const {
    if (xs <= 0 || xr <= 0 || xm <= 0) throw ValidationError("motor reactances must be positive");
    if (h <= 0) throw ValidationError("motor inertia must be positive");
    if (rs < 0 || rr <= 0) throw ValidationError("motor resistances invalid");
}

void ElectronicLoadParams::validate() const {
    if (!(v_off < v_full)) throw ValidationError("electronic load requires v_off < v_full");
}

void SinglePhaseImParams::validate() const {
    if (f_restart < 0.0 || f_restart > 1.0) {
        throw ValidationError("single-phase motor restart fraction outside [0,1]");
    }
    if (!(v_stall < v_restart)) {
        throw ValidationError("single-phase motor requires v_stall < v_restart");
    }
}

const std::vector<std::string>& ClmLiteParams::component_labels() {
    static const std::vector<std::string> labels{"ma", "mb", "mc", "md", "elec", "zip"};
    return labels;
}

ZipParams zip_preset(const std::string& name) {
    ZipParams z;
    if (name == "40Z60P") {
        z.p1c = 0.4; z.p2c = 0.0; z.p3c = 0.6;
        z.q1c = 0.4; z.q2c = 0.0; z.q3c = 0.6;
    } else if (name == "30Z30I40P") {
        z.p1c = 0.3; z.p2c = 0.3; z.p3c = 0.4;
        z.q1c = 0.3; z.q2c = 0.3; z.q3c = 0.4;
    } else if (name == "default_ip_zq") {
        z.p1c = 0.0; z.p2c = 1.0; z.p3c = 0.0;
        z.q1c = 1.0; z.q2c = 0.0; z.q3c = 0.0;
    } else if (name == "100P") {
        z.p1c = 0.0; z.p2c = 0.0; z.p3c = 1.0;
        z.q1c = 0.0; z.q2c = 0.0; z.q3c = 1.0;
    } else {
        throw ParseError("unknown static load preset: " + name);
    }
    return z;
}

ImParams motor_preset(const std::string& name) {
    ImParams m;
    if (name == "ma") {
        m.rs = 0.04; m.xs = 0.10; m.xm = 2.9; m.rr = 0.020; m.xr = 0.10;
        m.h = 0.4; m.torque_exp = 0.0;
    } else if (name == "mb") {
        m.rs = 0.03; m.xs = 0.11; m.xm = 3.2; m.rr = 0.018; m.xr = 0.13;
        m.h = 1.0; m.torque_exp = 2.0;
    } else if (name == "mc") {
        m.rs = 0.03; m.xs = 0.11; m.xm = 3.0; m.rr = 0.015; m.xr = 0.12;
        m.h = 0.2; m.torque_exp = 2.0;
    } else if (name == "im") {
        // defaults of ImParams are the generic machine
    } else {
        throw ParseError("unknown motor preset: " + name);
    }
    return m;
}

LoadModelSpec LoadModelSpec::static_preset(const std::string& name) {
    LoadModelSpec spec;
    spec.type = Type::StaticPreset;
    spec.preset_name = name;
    spec.zip = zip_preset(name);
    return spec;
}

ZipParams LoadModelSpec::resolved_zip() const {
    if (type == Type::StaticPreset) return zip_preset(preset_name);
    if (type == Type::Zip) return zip;
    throw ValidationError("load model is not a static ZIP family");
}

namespace {

void im_from_json(const json& j, ImParams& m) {
    if (j.contains("rs")) m.rs = j.at("rs").get<double>();
    if (j.contains("xs")) m.xs = j.at("xs").get<double>();
    if (j.contains("rr")) m.rr = j.at("rr").get<double>();
    if (j.contains("xr")) m.xr = j.at("xr").get<double>();
    if (j.contains("xm")) m.xm = j.at("xm").get<double>();
    if (j.contains("h")) m.h = j.at("h").get<double>();
    if (j.contains("mva_base")) m.mva_base = j.at("mva_base").get<double>();
    if (j.contains("loading")) m.loading = j.at("loading").get<double>();
    if (j.contains("torque_exp")) m.torque_exp = j.at("torque_exp").get<double>();
}

json im_to_json(const ImParams& m) {
    return json{{"rs", m.rs}, {"xs", m.xs}, {"rr", m.rr}, {"xr", m.xr},
                {"xm", m.xm}, {"h", m.h},   {"loading", m.loading},
                {"torque_exp", m.torque_exp}};
}

void zip_coeffs_from_json(const json& j, ZipParams& z) {
    if (j.contains("v0")) z.v0 = j.at("v0").get<double>();
    if (j.contains("p1c")) {
        z.p1c = j.at("p1c").get<double>();
        z.p2c = j.at("p2c").get<double>();
        z.p3c = j.at("p3c").get<double>();
    }
    if (j.contains("q1c")) {
        z.q1c = j.at("q1c").get<double>();
        z.q2c = j.at("q2c").get<double>();
        z.q3c = j.at("q3c").get<double>();
    }
}

json zip_coeffs_to_json(const ZipParams& z) {
    return json{{"v0", z.v0},   {"p1c", z.p1c}, {"p2c", z.p2c}, {"p3c", z.p3c},
                {"q1c", z.q1c}, {"q2c", z.q2c}, {"q3c", z.q3c}};
}

void elec_from_json(const json& j, ElectronicLoadParams& e) {
    if (j.contains("v_full")) e.v_full = j.at("v_full").get<double>();
    if (j.contains("v_off")) e.v_off = j.at("v_off").get<double>();
}

void spim_from_json(const json& j, SinglePhaseImParams& s) {
    if (j.contains("v_stall")) s.v_stall = j.at("v_stall").get<double>();
    if (j.contains("t_stall")) s.t_stall = j.at("t_stall").get<double>();
    if (j.contains("g_stall")) s.g_stall = j.at("g_stall").get<double>();
    if (j.contains("b_stall")) s.b_stall = j.at("b_stall").get<double>();
    if (j.contains("f_restart")) s.f_restart = j.at("f_restart").get<double>();
    if (j.contains("v_restart")) s.v_restart = j.at("v_restart").get<double>();
    if (j.contains("qp_ratio")) s.qp_ratio = j.at("qp_ratio").get<double>();
}

LoadComposition fractions_from_json(const json& j,
                                    const std::vector<std::string>& labels) {
    std::vector<double> f(labels.size(), 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        f[i] = j.at(labels[i]).get<double>();
    }
    return LoadComposition::from_fractions(labels, f);
}

}  // namespace

LoadModelSpec LoadModelSpec::from_json_text(const std::string& text,
                                            const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError("load model " + origin + ": " + e.what());
    }
    try {
        LoadModelSpec spec;
        const std::string type = j.at("type").get<std::string>();
        if (type == "zip") {
            spec.type = Type::Zip;
            zip_coeffs_from_json(j, spec.zip);
            spec.zip.validate();
        } else if (type == "zip_im") {
            spec.type = Type::ZipIm;
            if (j.contains("fractions")) {
                spec.zip_im.f_zip = j.at("fractions").at("zip").get<double>();
                spec.zip_im.f_im = j.at("fractions").at("im").get<double>();
            }
            if (std::abs(spec.zip_im.f_zip + spec.zip_im.f_im - 1.0) > 1e-9) {
                throw ValidationError("zip_im fractions must sum to 1");
            }
            if (j.contains("zip")) zip_coeffs_from_json(j.at("zip"), spec.zip_im.zip);
            if (j.contains("im")) im_from_json(j.at("im"), spec.zip_im.im);
            spec.zip_im.zip.validate();
            spec.zip_im.im.validate();
        } else if (type == "clm_lite") {
            spec.type = Type::ClmLite;
            auto& c = spec.clm;
            if (j.contains("feeder_r")) c.feeder_r = j.at("feeder_r").get<double>();
            if (j.contains("feeder_x")) c.feeder_x = j.at("feeder_x").get<double>();
            if (j.contains("shunt_b")) c.shunt_b = j.at("shunt_b").get<double>();
            if (j.contains("tap")) c.tap = j.at("tap").get<double>();
            c.fractions = fractions_from_json(j.at("fractions"),
                                              ClmLiteParams::component_labels());
            if (j.contains("ma")) im_from_json(j.at("ma"), c.ma);
            if (j.contains("mb")) im_from_json(j.at("mb"), c.mb);
            if (j.contains("mc")) im_from_json(j.at("mc"), c.mc);
            if (j.contains("md")) spim_from_json(j.at("md"), c.md);
            if (j.contains("elec")) elec_from_json(j.at("elec"), c.elec);
            if (j.contains("zip")) zip_coeffs_from_json(j.at("zip"), c.zip);
            c.fractions.validate();
            c.md.validate();
            c.elec.validate();
        } else if (type == "static_preset") {
            spec = static_preset(j.at("name").get<std::string>());
        } else {
            throw ParseError("unknown load model type: " + type);
        }
        return spec;
    } catch (const json::exception& e) {
        throw ParseError("load model " + origin + ": " + e.what());
    }
}

LoadModelSpec LoadModelSpec::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open load model file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str(), path);
}

std::string LoadModelSpec::to_json_text() const {
    json j;
    switch (type) {
        case Type::Zip: {
            j = zip_coeffs_to_json(zip);
            j["type"] = "zip";
            break;
        }
        case Type::ZipIm: {
            j["type"] = "zip_im";
            j["fractions"] = json{{"zip", zip_im.f_zip}, {"im", zip_im.f_im}};
            j["zip"] = zip_coeffs_to_json(zip_im.zip);
            j["im"] = im_to_json(zip_im.im);
            break;
        }
        case Type::ClmLite: {
            j["type"] = "clm_lite";
            j["feeder_r"] = clm.feeder_r;
            j["feeder_x"] = clm.feeder_x;
            j["shunt_b"] = clm.shunt_b;
            j["tap"] = clm.tap;
            json fr;
            for (std::size_t i = 0; i < clm.fractions.size(); ++i) {
                fr[clm.fractions.labels[i]] = clm.fractions.f(i);
            }
            j["fractions"] = fr;
            j["ma"] = im_to_json(clm.ma);
            j["mb"] = im_to_json(clm.mb);
            j["mc"] = im_to_json(clm.mc);
            j["md"] = json{{"v_stall", clm.md.v_stall}, {"t_stall", clm.md.t_stall},
                           {"g_stall", clm.md.g_stall}, {"b_stall", clm.md.b_stall},
                           {"f_restart", clm.md.f_restart}, {"v_restart", clm.md.v_restart},
                           {"qp_ratio", clm.md.qp_ratio}};
            j["elec"] = json{{"v_full", clm.elec.v_full}, {"v_off", clm.elec.v_off}};
            j["zip"] = zip_coeffs_to_json(clm.zip);
            break;
        }
        case Type::StaticPreset: {
            j["type"] = "static_preset";
            j["name"] = preset_name;
            break;
        }
    }
    return j.dump(2);
}

}  // namespace tslim
