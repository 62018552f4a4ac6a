#pragma once

// Array response, beam codebook, geometric OFDM channel synthesis,
// the exhaustive-search beam oracle and the received-signal model.
//
// Conventions:
//  - A ULA has M elements along a unit axis with spacing in wavelengths.
//  - Directions are expressed as the direction cosine u in [-1, 1], the
//    projection of the unit BS->drone direction onto the array axis.
//  - A channel stores one length-M row h_k per subcarrier (K x M).
//  - All arithmetic is complex<double>.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "beamvista/error.hpp"
#include "beamvista/rng.hpp"

namespace beamvista::wireless {

using cplx = std::complex<double>;
using CVector = Eigen::VectorXcd;
using Vec3 = Eigen::Vector3d;

struct UlaConfig {
    int num_antennas = 64;
    double element_spacing = 0.5;
    Vec3 axis = Vec3::UnitX();

    void validate() const {
        if (num_antennas < 1) throw ConfigError("ULA needs at least one antenna");
        if (!(element_spacing > 0.0)) throw ConfigError("ULA element spacing must be positive");
        if (std::abs(axis.norm() - 1.0) > 1e-12) throw ConfigError("ULA axis must be a unit vector");
    }
};

struct OfdmConfig {
    int num_subcarriers = 32;
    int cyclic_prefix = 8;

    void validate() const {
        if (num_subcarriers < 1) throw ConfigError("OFDM needs at least one subcarrier");
        if (cyclic_prefix < 0 || cyclic_prefix >= num_subcarriers)
            throw ConfigError("cyclic prefix must satisfy 0 <= D < K");
    }
};

struct Path {
    cplx gain{1.0, 0.0};
    double direction_cosine = 0.0;
    int delay = 0;  // taps
};

// K x M, row k is h_k.
struct Channel {
    Eigen::MatrixXcd h;

    int num_subcarriers() const { return static_cast<int>(h.rows()); }
    int num_antennas() const { return static_cast<int>(h.cols()); }
};

struct Codebook {
    Eigen::MatrixXcd beams;  // M x Q, column q is f_q
    std::vector<double> grid;

    int size() const { return static_cast<int>(grid.size()); }
    int num_antennas() const { return static_cast<int>(beams.rows()); }
    CVector beam(int q) const { return beams.col(q); }
};

struct TxConfig {
    double symbol_power = 1.0;
    double noise_variance = 1.0;

    void validate() const {
        if (!(symbol_power > 0.0)) throw ConfigError("symbol power must be positive");
        if (!(noise_variance >= 0.0)) throw ConfigError("noise variance must be non-negative");
    }

    double snr() const {
        if (noise_variance == 0.0) throw InputDomainError("SNR undefined for zero noise variance");
        return symbol_power / noise_variance;
    }

    // Deterministic pilot symbol with |x|^2 = P.
    cplx symbol() const { return {std::sqrt(symbol_power), 0.0}; }
};

inline CVector steering_vector(double u, const UlaConfig& cfg) {
    if (!(u >= -1.0 && u <= 1.0)) throw InputDomainError("direction cosine outside [-1, 1]");
    cfg.validate();
    CVector a(cfg.num_antennas);
    const double step = 2.0 * std::numbers::pi * cfg.element_spacing * u;
    for (int m = 0; m < cfg.num_antennas; ++m) a[m] = std::polar(1.0, step * m);
    return a;
}

// Direction-cosine-uniform grid u_q = -1 + (2q+1)/Q, with matched-filter
// beams f_q = conj(a(u_q)) / sqrt(M).
inline Codebook build_codebook(const UlaConfig& cfg, int num_beams) {
    if (num_beams <= 0) throw InputDomainError("codebook needs at least one beam");
    cfg.validate();
    Codebook cb;
    cb.grid.resize(num_beams);
    cb.beams.resize(cfg.num_antennas, num_beams);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.num_antennas));
    for (int q = 0; q < num_beams; ++q) {
        const double u = -1.0 + (2.0 * q + 1.0) / num_beams;
        cb.grid[q] = u;
        cb.beams.col(q) = steering_vector(u, cfg).conjugate() * scale;
    }
    return cb;
}

inline Channel channel_from_paths(const std::vector<Path>& paths, const UlaConfig& ula,
                                  const OfdmConfig& ofdm) {
    if (paths.empty()) throw InputDomainError("channel needs at least one path");
    ofdm.validate();
    for (const auto& p : paths) {
        if (p.delay < 0 || p.delay > ofdm.cyclic_prefix)
            throw InputDomainError("path delay outside [0, D]");
    }
    const int K = ofdm.num_subcarriers;
    Channel ch;
    ch.h = Eigen::MatrixXcd::Zero(K, ula.num_antennas);
    for (const auto& p : paths) {
        const CVector a = steering_vector(p.direction_cosine, ula);
        for (int k = 0; k < K; ++k) {
            const cplx phase = std::polar(1.0, -2.0 * std::numbers::pi * k * p.delay / K);
            ch.h.row(k) += (p.gain * phase) * a.transpose();
        }
    }
    return ch;
}

// (1/K) sum_k SNR |h_k^T f|^2
inline double receive_gain(const Channel& ch, const CVector& f, const TxConfig& tx) {
    if (f.size() != ch.num_antennas()) throw ShapeError("beam length does not match channel");
    const double snr = tx.snr();
    const CVector y = ch.h * f;
    return snr * y.squaredNorm() / ch.num_subcarriers();
}

struct BeamChoice {
    int index = 0;
    double gain = 0.0;
};

// Exhaustive codebook search; ties resolve to the lowest index.
inline BeamChoice optimal_beam(const Channel& ch, const Codebook& cb, const TxConfig& tx) {
    if (cb.num_antennas() != ch.num_antennas())
        throw ShapeError("codebook and channel antenna counts differ");
    BeamChoice best{0, -1.0};
    for (int q = 0; q < cb.size(); ++q) {
        const double g = receive_gain(ch, cb.beams.col(q), tx);
        if (g > best.gain) best = {q, g};
    }
    return best;
}

// y_k = h_k^T f x + v_k, v_k ~ CN(0, sigma^2).
inline std::vector<cplx> simulate_rx(const Channel& ch, const CVector& f, const TxConfig& tx,
                                     std::uint64_t seed) {
    if (f.size() != ch.num_antennas()) throw ShapeError("beam length does not match channel");
    tx.validate();
    const CVector clean = ch.h * f * tx.symbol();
    Rng rng(seed);
    const double sd = std::sqrt(tx.noise_variance / 2.0);
    std::vector<cplx> y(clean.size());
    for (Eigen::Index k = 0; k < clean.size(); ++k) {
        const double re = rng.normal();
        const double im = rng.normal();
        y[k] = clean[k] + (tx.noise_variance > 0.0 ? cplx(sd * re, sd * im) : cplx{});
    }
    return y;
}

}  // namespace beamvista::wireless
