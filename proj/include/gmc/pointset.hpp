// Featured point clouds: PLY I/O, normalization statistics, and PCA feature
// reduction.
//
// PLY schema (element "vertex"): float x, y, z; uchar or float red, green,
// blue; optional float f_0 .. f_{F-1} feature channels; optional float
// rf_0 .. rf_3 reduced-feature channels. Both ascii and
// binary_little_endian are read; writes are binary_little_endian.

#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gmc {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FeaturedPointCloud {
    Eigen::MatrixXd positions;         // N x 3, scene units
    Eigen::MatrixXd colors;            // N x 3, in [0, 1]
    Eigen::MatrixXd features;          // N x F raw semantic features (may be 0 cols)
    Eigen::MatrixXd reduced_features;  // N x 4 when present, else 0 cols

    Eigen::Index size() const { return positions.rows(); }
    bool has_reduced() const { return reduced_features.cols() == 4; }
};

struct NormStats {
    Eigen::Vector3d position_mean = Eigen::Vector3d::Zero();
    double position_scale = 1.0;
    Eigen::Vector4d feature_mean = Eigen::Vector4d::Zero();
    double feature_scale = 1.0;
    double position_weight = 1.0;  // {0.1, 1.0}
    bool degenerate = false;       // a zero-variance scale was clamped to 1
};

class PlyParseError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// PLY I/O
// ---------------------------------------------------------------------------

namespace detail {

struct PlyProperty {
    std::string name;
    std::string type;  // "float", "double", "uchar", ...
};

inline int ply_type_size(const std::string& t) {
    if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
    if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" ||
        t == "float32")
        return 4;
    if (t == "double" || t == "float64") return 8;
    throw PlyParseError("unsupported PLY property type: " + t);
}

inline double ply_read_binary_scalar(const char* p, const std::string& t) {
    auto load = [&](auto v) {
        std::memcpy(&v, p, sizeof(v));
        return static_cast<double>(v);
    };
    if (t == "char" || t == "int8") return load(std::int8_t{});
    if (t == "uchar" || t == "uint8") return load(std::uint8_t{});
    if (t == "short" || t == "int16") return load(std::int16_t{});
    if (t == "ushort" || t == "uint16") return load(std::uint16_t{});
    if (t == "int" || t == "int32") return load(std::int32_t{});
    if (t == "uint" || t == "uint32") return load(std::uint32_t{});
    if (t == "float" || t == "float32") return load(float{});
    return load(double{});
}

}  // namespace detail

inline FeaturedPointCloud load_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_ply: cannot open " + path);

    std::string line;
    if (!std::getline(in, line) || line.rfind("ply", 0) != 0) {
        throw PlyParseError("load_ply: " + path + ": missing 'ply' magic at byte 0");
    }
    bool binary = false;
    Eigen::Index vertex_count = -1;
    std::vector<detail::PlyProperty> props;
    bool in_vertex_element = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt == "binary_little_endian") {
                binary = true;
            } else if (fmt != "ascii") {
                throw PlyParseError("load_ply: unsupported format " + fmt);
            }
        } else if (tok == "element") {
            std::string name;
            Eigen::Index count;
            ls >> name >> count;
            in_vertex_element = (name == "vertex");
            if (in_vertex_element) vertex_count = count;
        } else if (tok == "property" && in_vertex_element) {
            detail::PlyProperty p;
            ls >> p.type >> p.name;
            if (p.type == "list") {
                throw PlyParseError("load_ply: list properties on vertex are not supported");
            }
            props.push_back(p);
        } else if (tok == "end_header") {
            break;
        } else if (tok.empty() && !in.good()) {
            throw PlyParseError("load_ply: header ended at byte offset " +
                                std::to_string(in.tellg()) + " without end_header");
        }
    }
    if (vertex_count < 0) throw PlyParseError("load_ply: no vertex element in " + path);

    auto find_prop = [&](const std::string& name) -> int {
        for (std::size_t i = 0; i < props.size(); ++i) {
            if (props[i].name == name) return static_cast<int>(i);
        }
        return -1;
    };
    for (const char* req : {"x", "y", "z", "red", "green", "blue"}) {
        if (find_prop(req) < 0) {
            throw PlyParseError("load_ply: " + path + ": missing required property '" + req + "'");
        }
    }
    // feature columns f_0..f_{F-1}, contiguous from 0
    int feature_dim = 0;
    while (find_prop("f_" + std::to_string(feature_dim)) >= 0) ++feature_dim;
    int reduced_dim = 0;
    while (find_prop("rf_" + std::to_string(reduced_dim)) >= 0) ++reduced_dim;
    if (reduced_dim != 0 && reduced_dim != 4) {
        throw PlyParseError("load_ply: reduced feature block must have exactly 4 channels");
    }

    RowMajorMatrix raw(vertex_count, static_cast<Eigen::Index>(props.size()));
    if (binary) {
        std::size_t row_bytes = 0;
        for (const auto& p : props) row_bytes += detail::ply_type_size(p.type);
        std::vector<char> buf(row_bytes);
        for (Eigen::Index r = 0; r < vertex_count; ++r) {
            if (!in.read(buf.data(), static_cast<std::streamsize>(row_bytes))) {
                throw PlyParseError("load_ply: " + path + ": truncated at byte offset " +
                                    std::to_string(in.tellg()) + " (row " + std::to_string(r) +
                                    " of " + std::to_string(vertex_count) + ")");
            }
            std::size_t off = 0;
            for (std::size_t c = 0; c < props.size(); ++c) {
                raw(r, static_cast<Eigen::Index>(c)) =
                    detail::ply_read_binary_scalar(buf.data() + off, props[c].type);
                off += detail::ply_type_size(props[c].type);
            }
        }
    } else {
        for (Eigen::Index r = 0; r < vertex_count; ++r) {
            if (!std::getline(in, line)) {
                throw PlyParseError("load_ply: " + path + ": expected " +
                                    std::to_string(vertex_count) + " vertex rows, got " +
                                    std::to_string(r));
            }
            std::istringstream ls(line);
            for (std::size_t c = 0; c < props.size(); ++c) {
                if (!(ls >> raw(r, static_cast<Eigen::Index>(c)))) {
                    throw PlyParseError("load_ply: " + path + ": malformed vertex row " +
                                        std::to_string(r));
                }
            }
        }
    }

    FeaturedPointCloud cloud;
    cloud.positions.resize(vertex_count, 3);
    cloud.colors.resize(vertex_count, 3);
    cloud.features.resize(vertex_count, feature_dim);
    cloud.reduced_features.resize(vertex_count, reduced_dim);
    const int ix = find_prop("x"), iy = find_prop("y"), iz = find_prop("z");
    const int ir = find_prop("red"), ig = find_prop("green"), ib = find_prop("blue");
    const bool color_uchar = detail::ply_type_size(props[static_cast<std::size_t>(ir)].type) == 1;
    std::vector<int> fcols(static_cast<std::size_t>(feature_dim));
    for (int f = 0; f < feature_dim; ++f) fcols[f] = find_prop("f_" + std::to_string(f));
    std::vector<int> rcols(static_cast<std::size_t>(reduced_dim));
    for (int f = 0; f < reduced_dim; ++f) rcols[f] = find_prop("rf_" + std::to_string(f));
    for (Eigen::Index r = 0; r < vertex_count; ++r) {
        cloud.positions.row(r) << raw(r, ix), raw(r, iy), raw(r, iz);
        cloud.colors.row(r) << raw(r, ir), raw(r, ig), raw(r, ib);
        if (color_uchar) cloud.colors.row(r) /= 255.0;
        for (int f = 0; f < feature_dim; ++f) cloud.features(r, f) = raw(r, fcols[f]);
        for (int f = 0; f < reduced_dim; ++f) cloud.reduced_features(r, f) = raw(r, rcols[f]);
    }
    return cloud;
}

inline void save_ply(const FeaturedPointCloud& cloud, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_ply: cannot open " + path + " for writing");
    const Eigen::Index n = cloud.size();
    const int fdim = static_cast<int>(cloud.features.cols());
    const int rdim = static_cast<int>(cloud.reduced_features.cols());
    out << "ply\nformat binary_little_endian 1.0\n";
    out << "comment feature_channels " << fdim << "\n";
    out << "element vertex " << n << "\n";
    out << "property float x\nproperty float y\nproperty float z\n";
    out << "property float red\nproperty float green\nproperty float blue\n";
    for (int f = 0; f < fdim; ++f) out << "property float f_" << f << "\n";
    for (int f = 0; f < rdim; ++f) out << "property float rf_" << f << "\n";
    out << "end_header\n";
    std::vector<float> row(static_cast<std::size_t>(6 + fdim + rdim));
    for (Eigen::Index r = 0; r < n; ++r) {
        std::size_t c = 0;
        for (int k = 0; k < 3; ++k) row[c++] = static_cast<float>(cloud.positions(r, k));
        for (int k = 0; k < 3; ++k) row[c++] = static_cast<float>(cloud.colors(r, k));
        for (int k = 0; k < fdim; ++k) row[c++] = static_cast<float>(cloud.features(r, k));
        for (int k = 0; k < rdim; ++k) row[c++] = static_cast<float>(cloud.reduced_features(r, k));
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("save_ply: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// Statistics come from the start-state cloud only and are applied to both
// clouds. Scales are RMS deviations; zero variance clamps to 1 and sets the
// degenerate flag.
inline NormStats compute_norm_stats(const FeaturedPointCloud& reference, double position_weight) {
    if (reference.size() == 0) throw std::invalid_argument("compute_norm_stats: empty cloud");
    if (!reference.has_reduced()) {
        throw std::invalid_argument("compute_norm_stats: reference lacks reduced features");
    }
    NormStats st;
    st.position_weight = position_weight;
    st.position_mean = reference.positions.colwise().mean().transpose();
    const Eigen::MatrixXd centered = reference.positions.rowwise() - st.position_mean.transpose();
    st.position_scale = std::sqrt(centered.squaredNorm() / static_cast<double>(reference.size()));
    st.feature_mean = reference.reduced_features.colwise().mean().transpose();
    const Eigen::MatrixXd fcentered =
        reference.reduced_features.rowwise() - st.feature_mean.transpose();
    st.feature_scale = std::sqrt(fcentered.squaredNorm() / static_cast<double>(reference.size()));
    if (!(st.position_scale > 0.0)) {
        st.position_scale = 1.0;
        st.degenerate = true;
    }
    if (!(st.feature_scale > 0.0)) {
        st.feature_scale = 1.0;
        st.degenerate = true;
    }
    return st;
}

// positions <- position_weight * (p - mean) / scale; reduced features are
// standardized the same way; colors pass through untouched.
inline FeaturedPointCloud normalize(const FeaturedPointCloud& cloud, const NormStats& st) {
    FeaturedPointCloud out = cloud;
    out.positions = (cloud.positions.rowwise() - st.position_mean.transpose()) *
                    (st.position_weight / st.position_scale);
    if (cloud.has_reduced()) {
        out.reduced_features =
            (cloud.reduced_features.rowwise() - st.feature_mean.transpose()) / st.feature_scale;
    }
    return out;
}

inline FeaturedPointCloud denormalize(const FeaturedPointCloud& cloud, const NormStats& st) {
    FeaturedPointCloud out = cloud;
    out.positions = (cloud.positions * (st.position_scale / st.position_weight)).rowwise() +
                    st.position_mean.transpose();
    if (cloud.has_reduced()) {
        out.reduced_features =
            (cloud.reduced_features * st.feature_scale).rowwise() + st.feature_mean.transpose();
    }
    return out;
}

// Maps normalized coordinates back to world space, one point at a time.
inline Eigen::Vector3d denormalize_position(const Eigen::Vector3d& p, const NormStats& st) {
    return p * (st.position_scale / st.position_weight) + st.position_mean;
}

// ---------------------------------------------------------------------------
// PCA feature reduction
// ---------------------------------------------------------------------------

struct PcaResult {
    Eigen::MatrixXd reduced;      // N x k
    Eigen::MatrixXd basis;        // F x k, orthonormal columns, eigenvalues descending
    Eigen::VectorXd eigenvalues;  // k, descending
    Eigen::VectorXd mean;         // F
    bool rank_deficient = false;
};

// Projects centered features onto the top-k eigenvectors of their covariance.
// Rank-deficient inputs get zero columns past the rank and the flag set.
inline PcaResult pca_reduce(const Eigen::MatrixXd& features, int k = 4) {
    const Eigen::Index n = features.rows();
    const Eigen::Index f = features.cols();
    if (n < k || f < k) {
        throw std::invalid_argument("pca_reduce: need at least k rows and k columns");
    }
    PcaResult res;
    res.mean = features.colwise().mean().transpose();
    const Eigen::MatrixXd centered = features.rowwise() - res.mean.transpose();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw std::runtime_error("pca_reduce: eigensolver failed");

    res.basis.resize(f, k);
    res.eigenvalues.resize(k);
    const double rank_tol = 1e-12 * std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
    for (int j = 0; j < k; ++j) {
        const Eigen::Index src = f - 1 - j;  // solver sorts ascending
        const double ev = eig.eigenvalues()(src);
        if (ev > rank_tol) {
            res.basis.col(j) = eig.eigenvectors().col(src);
            res.eigenvalues(j) = ev;
        } else {
            res.basis.col(j).setZero();
            res.eigenvalues(j) = 0.0;
            res.rank_deficient = true;
        }
    }
    res.reduced = centered * res.basis;
    return res;
}

}  // namespace gmc
