// JSON (de)serialization for networks, optimizer state, and checkpoints.
// Doubles round-trip exactly through nlohmann's %.17g output, so a reloaded
// checkpoint resumes bit-for-bit.

#pragma once

#include "gmc/field.hpp"
#include "gmc/mlp.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gmc {

using Json = nlohmann::json;

inline Json matrix_to_json(const Matrix& m) {
    Json rows = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from_json(const Json& j) {
    const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    const Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
    return m;
}

inline Json vector_to_json(const Vector& v) {
    Json out = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

inline Vector vector_from_json(const Json& j) {
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j.at(i).get<double>();
    return v;
}

inline Json mlp_to_json(const Mlp& net) {
    Json j;
    j["sizes"] = net.sizes;
    j["activation"] = net.activation == Activation::kRelu ? "relu" : "tanh";
    Json layers = Json::array();
    for (const auto& l : net.layers) {
        layers.push_back({{"weight", matrix_to_json(l.weight)}, {"bias", vector_to_json(l.bias)}});
    }
    j["layers"] = std::move(layers);
    return j;
}

inline Mlp mlp_from_json(const Json& j) {
    Mlp net;
    net.sizes = j.at("sizes").get<std::vector<int>>();
    net.activation = j.at("activation").get<std::string>() == "tanh" ? Activation::kTanh
                                                                     : Activation::kRelu;
    for (const auto& lj : j.at("layers")) {
        net.layers.push_back({matrix_from_json(lj.at("weight")), vector_from_json(lj.at("bias"))});
    }
    return net;
}

inline Json adam_to_json(const AdamState& st) {
    Json j;
    j["step"] = st.step;
    j["skipped"] = st.skipped;
    j["lr"] = st.cfg.lr;
    j["beta1"] = st.cfg.beta1;
    j["beta2"] = st.cfg.beta2;
    j["eps"] = st.cfg.eps;
    Json moments = Json::array();
    for (std::size_t l = 0; l < st.m.size(); ++l) {
        moments.push_back({{"mw", matrix_to_json(st.m[l].weight)},
                           {"mb", vector_to_json(st.m[l].bias)},
                           {"vw", matrix_to_json(st.v[l].weight)},
                           {"vb", vector_to_json(st.v[l].bias)}});
    }
    j["moments"] = std::move(moments);
    return j;
}

inline AdamState adam_from_json(const Json& j) {
    AdamState st;
    st.step = j.at("step").get<std::int64_t>();
    st.skipped = j.at("skipped").get<std::int64_t>();
    st.cfg.lr = j.at("lr").get<double>();
    st.cfg.beta1 = j.at("beta1").get<double>();
    st.cfg.beta2 = j.at("beta2").get<double>();
    st.cfg.eps = j.at("eps").get<double>();
    for (const auto& mj : j.at("moments")) {
        st.m.push_back({matrix_from_json(mj.at("mw")), vector_from_json(mj.at("mb"))});
        st.v.push_back({matrix_from_json(mj.at("vw")), vector_from_json(mj.at("vb"))});
    }
    return st;
}

inline Json field_to_json(const UnaryField& f) {
    return Json{{"timestep", f.timestep},
                {"rotation_head", mlp_to_json(f.rotation_head)},
                {"translation_head", mlp_to_json(f.translation_head)}};
}

inline UnaryField field_from_json(const Json& j) {
    UnaryField f;
    f.timestep = j.at("timestep").get<int>();
    f.rotation_head = mlp_from_json(j.at("rotation_head"));
    f.translation_head = mlp_from_json(j.at("translation_head"));
    return f;
}

// FNV-1a, used as a content checksum on checkpoints and as the config hash.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline std::mt19937_64 rng_from_string(const std::string& s) {
    std::mt19937_64 rng;
    std::istringstream is(s);
    is >> rng;
    if (!is) throw std::runtime_error("rng_from_string: malformed RNG state");
    return rng;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << content;
    if (!out) throw std::runtime_error("write failed for " + path);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace gmc
