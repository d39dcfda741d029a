#pragma once

// Shared helpers for the unit suites: scenario builders and state lookup.

#include <stdexcept>
#include <string>

#include "gfmstab/gfmstab.hpp"

namespace gfmstab::testing {

inline ScenarioSpec scenario(NetworkMode mode, SourceKind src, LoadKind load) {
    ScenarioSpec s;
    s.network.mode = mode;
    s.source.kind = src;
    s.load.kind = load;
    if (mode == NetworkMode::emt && load != LoadKind::im && load != LoadKind::cpl) s.network.c_load = 0.02;
    if (src == SourceKind::marconato) s.network.c_source = 0.05;
    return s;
}

/// The eta-parameterized stiff-source ZIP system with P_cpl = 1, Q = 0.
inline ScenarioSpec zip_eta() {
    ScenarioSpec s;
    s.network.mode = NetworkMode::emt;
    s.source.kind = SourceKind::stiff;
    s.load.kind = LoadKind::zip;
    s.load.p_cpl = 1.0;
    s.parameter = StudyParameter::eta;
    s.level = 1.0;
    return s;
}

/// Value of a labelled state, differential first.
inline double value(const SystemModel& sys, const OperatingPoint& op, const std::string& label) {
    for (std::size_t k = 0; k < sys.x_labels.size(); ++k)
        if (sys.x_labels[k] == label) return op.x(static_cast<Eigen::Index>(k));
    for (std::size_t k = 0; k < sys.y_labels.size(); ++k)
        if (sys.y_labels[k] == label) return op.y(static_cast<Eigen::Index>(k));
    throw std::out_of_range("no state labelled " + label);
}

inline Phasor pair(const SystemModel& sys, const OperatingPoint& op, const std::string& stem) {
    return {value(sys, op, stem + "_d"), value(sys, op, stem + "_q")};
}

inline double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace gfmstab::testing

namespace gfmstab::testing {

/// Linear DAE dx = Fx x + Fy y, 0 = Gx x + Gy y.
inline SystemModel linear_dae(const Eigen::MatrixXd& Fx, const Eigen::MatrixXd& Fy, const Eigen::MatrixXd& Gx,
                              const Eigen::MatrixXd& Gy) {
    SystemModel s;
    s.name = "linear";
    for (Eigen::Index k = 0; k < Fx.rows(); ++k) s.x_labels.push_back("x" + std::to_string(k));
    for (Eigen::Index k = 0; k < Gy.rows(); ++k) s.y_labels.push_back("y" + std::to_string(k));
    s.x_rotation.assign(s.x_labels.size(), Rotation::none);
    s.y_rotation.assign(s.y_labels.size(), Rotation::none);
    s.eval = [=](const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd&, Eigen::VectorXd& f,
                 Eigen::VectorXd& g) {
        f = Fx * x + (Fy.size() ? Eigen::VectorXd(Fy * y) : Eigen::VectorXd::Zero(x.size()));
        g = Gy.size() ? Eigen::VectorXd(Gx * x + Gy * y) : Eigen::VectorXd(0);
    };
    return s;
}

inline OperatingPoint origin(const SystemModel& s, double level = 0.0) {
    OperatingPoint op;
    op.level = level;
    op.x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.n_x()));
    op.y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.n_y()));
    op.theta = Eigen::VectorXd::Zero(0);
    return op;
}

}  // namespace gfmstab::testing
