#ifndef KINFIT_MODEL_HPP
#define KINFIT_MODEL_HPP

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace kinfit {

enum class ModelKind { TwoCatenary, ThreeRenal };

/// Compartmental topology descriptor. Parameter ordering is fixed and
/// shared by every module (serialization and map naming depend on it):
///   TwoCatenary: k_fb, k_bf, k_mf, k_fm
///   ThreeRenal:  k_fa, k_ma, k_af, k_mf, k_fm, k_tm, k_ut
struct ModelSpec {
    ModelKind kind = ModelKind::TwoCatenary;

    static ModelSpec two_catenary() { return ModelSpec{ModelKind::TwoCatenary}; }
    static ModelSpec three_renal() { return ModelSpec{ModelKind::ThreeRenal}; }

    int n_compartments() const { return kind == ModelKind::TwoCatenary ? 2 : 3; }
    int n_params() const { return kind == ModelKind::TwoCatenary ? 4 : 7; }

    const std::vector<std::string>& parameter_names() const {
        static const std::vector<std::string> two = {"k_fb", "k_bf", "k_mf", "k_fm"};
        static const std::vector<std::string> three = {"k_fa", "k_ma", "k_af", "k_mf",
                                                       "k_fm", "k_tm", "k_ut"};
        return kind == ModelKind::TwoCatenary ? two : three;
    }

    std::string name() const {
        return kind == ModelKind::TwoCatenary ? "two_catenary" : "three_renal";
    }

    static ModelSpec from_name(const std::string& s) {
        if (s == "two_catenary") return two_catenary();
        if (s == "three_renal") return three_renal();
        throw std::invalid_argument("unknown model name: " + s);
    }

    bool operator==(const ModelSpec& o) const { return kind == o.kind; }
};

/// Kinetic parameter vector (min^-1), componentwise >= 0.
struct RateConstants {
    ModelSpec model;
    Eigen::VectorXd k;

    RateConstants() = default;
    RateConstants(ModelSpec m, Eigen::VectorXd values) : model(m), k(std::move(values)) {
        if (k.size() != model.n_params())
            throw std::invalid_argument("RateConstants: wrong parameter count for model");
        for (Eigen::Index i = 0; i < k.size(); ++i)
            if (!(k[i] >= 0.0))
                throw std::invalid_argument("RateConstants: rate constants must be >= 0");
    }

    static RateConstants from(ModelSpec m, std::initializer_list<double> values) {
        Eigen::VectorXd v(static_cast<Eigen::Index>(values.size()));
        Eigen::Index i = 0;
        for (double x : values) v[i++] = x;
        return RateConstants(m, std::move(v));
    }
};

/// System matrix M (n x n, min^-1) and input-function weight vector
/// (the w(t) = w_weights * IF(t) forcing).
struct SystemMatrices {
    Eigen::MatrixXd M;
    Eigen::VectorXd w_weights;
};

inline SystemMatrices build_system(const ModelSpec& model, const RateConstants& rates) {
    if (rates.k.size() != model.n_params() || !(rates.model == model))
        throw std::invalid_argument("build_system: parameter vector does not match model");
    const auto& k = rates.k;
    SystemMatrices sys;
    if (model.kind == ModelKind::TwoCatenary) {
        const double k_fb = k[0], k_bf = k[1], k_mf = k[2], k_fm = k[3];
        sys.M.resize(2, 2);
        sys.M << -(k_bf + k_mf), k_fm,
                 k_mf, -k_fm;
        sys.w_weights.resize(2);
        sys.w_weights << k_fb, 0.0;
    } else {
        const double k_fa = k[0], k_ma = k[1], k_af = k[2], k_mf = k[3];
        const double k_fm = k[4], k_tm = k[5], k_ut = k[6];
        sys.M.resize(3, 3);
        sys.M << -(k_af + k_mf), k_fm, 0.0,
                 k_mf, -(k_fm + k_tm), 0.0,
                 0.0, k_tm, -k_ut;
        sys.w_weights.resize(3);
        sys.w_weights << k_fa, k_ma, 0.0;
    }
    return sys;
}

}  // namespace kinfit

#endif
