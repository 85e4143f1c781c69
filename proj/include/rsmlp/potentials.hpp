#pragma once

#include "rsmlp/spectral.hpp"

#include <memory>
#include <string>
#include <vector>

namespace rsmlp {

struct PotentialOptions {
    int nodes = 400;
    double x_min = 1e-3;
    double x_max = 1e3;
    SpectralOptions spectral;
    std::string cache_dir;  // empty: in-memory only
};

/// mmse(x) on a geometric SNR grid plus its integral iota and inverse.
/// Symmetric: iota = (1/4) int mmse_S. Rectangular: iota = (1/2) int mmse.
class DenoisingPotential {
public:
    enum class Kind { Symmetric, Rectangular };

    static std::shared_ptr<const DenoisingPotential> symmetric(double gamma, const ReadoutPrior& pv,
                                                               const PotentialOptions& opt = {});
    static std::shared_ptr<const DenoisingPotential> rectangular(double eta, double gamma,
                                                                 const PotentialOptions& opt = {});

    DenoisingPotential(Kind kind, std::vector<double> x, std::vector<double> m, double eta, double gamma,
                       std::shared_ptr<const SpectralModel> model);
    ~DenoisingPotential();

    double mmse(double x) const;
    double dmmse(double x) const;
    double iota(double x) const;
    // tau with mmse(tau) = target; saturated is set when tau lies beyond the cached grid.
    double inverse(double target, bool* saturated = nullptr) const;
    // mmse recomputed from the spectral density at x, without interpolation.
    double direct_mmse(double x) const;

    Kind kind() const { return kind_; }
    double iota_factor() const { return kind_ == Kind::Symmetric ? 0.25 : 0.5; }
    double x_max() const { return x_.back(); }
    const std::vector<double>& snr_grid() const { return x_; }
    const std::vector<double>& mmse_values() const { return m_; }
    std::vector<double> iota_values() const;
    std::string key() const { return key_; }

private:
    double integral(double x) const;  // int_0^x mmse
    struct Impl;
    std::unique_ptr<Impl> impl_;
    Kind kind_;
    std::vector<double> x_, m_, cum_;
    double eta_ = 1.0, gamma_ = 1.0;
    double tail_c_ = 0.0, tail_d_ = 0.0;
    std::shared_ptr<const SpectralModel> model_;
    std::string key_;
    friend struct PotentialFactory;
};

// Stable content hash used for on-disk cache names.
std::string content_hash(const std::string& text);

}  // namespace rsmlp
