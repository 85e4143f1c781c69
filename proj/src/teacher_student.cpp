#include "rsmlp/teacher_student.hpp"

#include "rsmlp/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace rsmlp {

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) {
    std::seed_seq s{(std::uint32_t)seed, (std::uint32_t)(seed >> 32), (std::uint32_t)id, 0x5eedu};
    return std::mt19937_64(s);
}

double draw_weight(const WeightPrior& wp, std::mt19937_64& rng) {
    if (wp.kind == WeightPrior::Kind::Gaussian) return std::normal_distribution<double>()(rng);
    std::discrete_distribution<int> pick(wp.probs.begin(), wp.probs.end());
    return wp.values[pick(rng)];
}

double draw_readout(const ReadoutPrior& pv, std::mt19937_64& rng) {
    if (pv.name == "gaussian") return std::normal_distribution<double>()(rng);
    std::discrete_distribution<int> pick(pv.probs.begin(), pv.probs.end());
    return pv.values[pick(rng)];
}

Eigen::MatrixXd apply(const ActivationSpec& act, const Eigen::MatrixXd& H) {
    return H.unaryExpr([&act](double h) { return act.eval(h); });
}

int bin_of(double v, int n_bins) {
    int b = (int)std::floor((v + 2.0) / 4.0 * n_bins);
    return std::clamp(b, 0, n_bins - 1);
}

BinnedProfile make_bins(int n_bins) {
    BinnedProfile p;
    for (int b = 0; b < n_bins; ++b) p.centers.push_back(-2.0 + (b + 0.5) * 4.0 / n_bins);
    p.mean.assign(n_bins, 0.0);
    p.count.assign(n_bins, 0);
    return p;
}

void finish_bins(BinnedProfile& p) {
    for (std::size_t b = 0; b < p.mean.size(); ++b) p.mean[b] = p.count[b] ? p.mean[b] / p.count[b] : NAN;
}

Eigen::MatrixXd cholesky_of(const Eigen::MatrixXd& C) {
    Eigen::LLT<Eigen::MatrixXd> llt(C);
    if (llt.info() != Eigen::Success) throw ConfigError("covariance matrix is not positive definite");
    return llt.matrixL();
}

Eigen::MatrixXd covariance_factor(int d, const CovarianceSpec& cov, std::uint64_t seed) {
    switch (cov.kind) {
        case CovarianceSpec::Kind::Identity: return Eigen::MatrixXd();
        case CovarianceSpec::Kind::Wishart: {
            if (cov.d0 <= 0) throw ConfigError("wishart covariance needs d0 > 0");
            auto rng = stream(seed, 4);
            std::normal_distribution<double> n01;
            Eigen::MatrixXd W0(d, cov.d0);
            for (int j = 0; j < cov.d0; ++j)
                for (int i = 0; i < d; ++i) W0(i, j) = n01(rng);
            Eigen::MatrixXd C = W0 * W0.transpose() / cov.d0;
            if (cov.d0 < d) C.diagonal().array() += 1e-10;
            return cholesky_of(C);
        }
        case CovarianceSpec::Kind::File: {
            std::ifstream in(cov.path);
            if (!in) throw IoError("cannot open covariance file " + cov.path);
            std::vector<double> vals;
            std::string tok;
            while (in >> tok) {
                try {
                    std::size_t used = 0;
                    vals.push_back(std::stod(tok, &used));
                    if (used != tok.size()) throw std::invalid_argument(tok);
                } catch (const std::exception&) {
                    throw ConfigError("covariance file " + cov.path + ": cannot parse '" + tok + "'");
                }
            }
            if ((long)vals.size() != (long)d * d)
                throw ConfigError("covariance file " + cov.path + ": expected " + std::to_string(d * d) + " entries, found " +
                                  std::to_string(vals.size()));
            Eigen::MatrixXd C = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(vals.data(), d, d);
            if (!C.isApprox(C.transpose(), 1e-10)) throw ConfigError("covariance file " + cov.path + ": matrix is not symmetric");
            return cholesky_of(C);
        }
    }
    return Eigen::MatrixXd();
}

}  // namespace

void Architecture::validate() const {
    if (d <= 0 || widths.empty()) throw std::invalid_argument("architecture: need d > 0 and at least one layer");
    for (int k : widths)
        if (k <= 0) throw std::invalid_argument("architecture: widths must be positive");
    if (!act.eval) throw std::invalid_argument("architecture: activation has no evaluator");
}

std::string CovarianceSpec::describe() const {
    switch (kind) {
        case Kind::Identity: return "identity";
        case Kind::Wishart: return "wishart:" + std::to_string(d0);
        default: return "file:" + path;
    }
}

TeacherParams sample_teacher(const Architecture& arch, const WeightPrior& wp, const ReadoutPrior& pv, std::mt19937_64& rng) {
    arch.validate();
    TeacherParams th;
    th.arch = arch;
    int fan = arch.d;
    for (int k : arch.widths) {
        Eigen::MatrixXd W(k, fan);
        for (int j = 0; j < fan; ++j)
            for (int i = 0; i < k; ++i) W(i, j) = draw_weight(wp, rng);
        th.W.push_back(std::move(W));
        fan = k;
    }
    th.v.resize(fan);
    for (int i = 0; i < fan; ++i) th.v[i] = draw_readout(pv, rng);
    return th;
}

Eigen::MatrixXd sample_inputs(int n, int d, const CovarianceSpec& cov, std::uint64_t seed) {
    auto rng = stream(seed, 2);
    std::normal_distribution<double> n01;
    Eigen::MatrixXd Z(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) Z(i, j) = n01(rng);
    Eigen::MatrixXd L = covariance_factor(d, cov, seed);
    if (L.size() == 0) return Z;
    return Z * L.transpose();
}

Dataset generate_dataset(const Architecture& arch, const WeightPrior& wp, const ReadoutPrior& pv, int n, double delta,
                         const CovarianceSpec& cov, std::uint64_t seed) {
    if (!(delta > 0)) throw std::domain_error("generate_dataset: delta must be positive");
    if (n < 0) throw std::invalid_argument("generate_dataset: n must be non-negative");
    wp.validate();
    Dataset ds;
    auto trng = stream(seed, 1);
    ds.teacher = sample_teacher(arch, wp, pv, trng);
    ds.teacher.seed = seed;
    ds.X = sample_inputs(n, arch.d, cov, seed);
    ds.y = forward_batch(ds.teacher, ds.X);
    auto nrng = stream(seed, 3);
    std::normal_distribution<double> n01;
    const double s = std::sqrt(delta);
    for (int m = 0; m < n; ++m) ds.y[m] += s * n01(nrng);
    ds.delta = delta;
    ds.covariance = cov;
    ds.weight_prior = wp;
    ds.readout_prior = pv;
    ds.seed = seed;
    return ds;
}

Eigen::VectorXd forward_batch(const TeacherParams& th, const Eigen::MatrixXd& X) {
    if (X.cols() != th.arch.d) throw std::invalid_argument("forward: input dimension mismatch");
    // columns are samples
    Eigen::MatrixXd A = X.transpose();
    for (const auto& W : th.W) A = apply(th.arch.act, W * A / std::sqrt((double)W.cols()));
    return (th.v.transpose() * A).transpose() / std::sqrt((double)th.v.size());
}

double forward(const TeacherParams& th, const Eigen::VectorXd& x) {
    if (x.size() != th.arch.d) throw std::invalid_argument("forward: input dimension mismatch");
    return forward_batch(th, x.transpose())[0];
}

OverlapReport measure_overlaps(const TeacherParams& a, const TeacherParams& b, int l_max, int n_bins) {
    if (a.W.size() != b.W.size() || a.v.size() != b.v.size()) throw std::invalid_argument("measure_overlaps: architectures differ");
    for (std::size_t l = 0; l < a.W.size(); ++l)
        if (a.W[l].rows() != b.W[l].rows() || a.W[l].cols() != b.W[l].cols())
            throw std::invalid_argument("measure_overlaps: layer shapes differ");
    if (n_bins < 1 || l_max < 1) throw std::invalid_argument("measure_overlaps: need n_bins, l_max >= 1");
    OverlapReport r;
    const auto& v = b.v;
    const int L = (int)a.W.size();
    const int k = (int)v.size();
    const auto& Wa = a.W.back();
    const auto& Wb = b.W.back();
    Eigen::MatrixXd Om = Wa * Wb.transpose() / (double)Wa.cols();
    Eigen::MatrixXd P = Om;
    for (int l = 1; l <= l_max; ++l) {
        if (l > 1) P = P.cwiseProduct(Om);
        r.R.push_back(v.dot(P * v) / k);
    }
    for (int l = 0; l + 1 < L; ++l)
        r.Q_inner.push_back((a.W[l].cwiseProduct(b.W[l])).sum() / (double)(a.W[l].rows() * a.W[l].cols()));
    r.Q_last = make_bins(n_bins);
    for (int i = 0; i < k; ++i) {
        int bin = bin_of(v[i], n_bins);
        r.Q_last.mean[bin] += Om(i, i);
        r.Q_last.count[bin] += 1;
    }
    finish_bins(r.Q_last);
    if (L == 2) {
        const auto &W1a = a.W[0], &W1b = b.W[0], &W2a = a.W[1], &W2b = b.W[1];
        const int k1 = (int)W1a.rows(), d = (int)W1a.cols();
        Eigen::MatrixXd Pa = W2a * W1a / std::sqrt((double)k1), Pb = W2b * W1b / std::sqrt((double)k1);
        Eigen::VectorXd o21 = (Pa.cwiseProduct(Pb)).rowwise().sum() / (double)d;
        r.Q21 = make_bins(n_bins);
        for (int i = 0; i < k; ++i) {
            int bin = bin_of(v[i], n_bins);
            r.Q21.mean[bin] += o21[i];
            r.Q21.count[bin] += 1;
        }
        finish_bins(r.Q21);
        Eigen::VectorXd v2 = W2b.transpose() * v / std::sqrt((double)k);
        Eigen::VectorXd o1 = (W1a.cwiseProduct(W1b)).rowwise().sum() / (double)d;
        r.Q1_by_v2 = make_bins(n_bins);
        std::vector<int> b2(k1);
        for (int j = 0; j < k1; ++j) {
            b2[j] = bin_of(v2[j], n_bins);
            r.Q1_by_v2.mean[b2[j]] += o1[j];
            r.Q1_by_v2.count[b2[j]] += 1;
        }
        finish_bins(r.Q1_by_v2);
        std::vector<double> sum(n_bins * n_bins, 0.0);
        std::vector<int> cnt(n_bins * n_bins, 0);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k1; ++j) {
                int c = bin_of(v[i], n_bins) * n_bins + b2[j];
                sum[c] += W2a(i, j) * W2b(i, j);
                cnt[c] += 1;
            }
        r.Q2_grid.resize(sum.size());
        for (std::size_t c = 0; c < sum.size(); ++c) r.Q2_grid[c] = cnt[c] ? sum[c] / cnt[c] : NAN;
    }
    return r;
}

ErrorReport empirical_errors(const std::vector<TeacherParams>& samples, const TeacherParams& teacher, const Eigen::MatrixXd& X_test) {
    if (samples.empty()) throw std::invalid_argument("empirical_errors: need at least one sample");
    if (X_test.rows() == 0) throw std::invalid_argument("empirical_errors: empty test set");
    const double n = (double)X_test.rows();
    Eigen::VectorXd l0 = forward_batch(teacher, X_test);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(l0.size());
    ErrorReport r;
    r.teacher_power = l0.squaredNorm() / n;
    for (const auto& s : samples) {
        Eigen::VectorXd l = forward_batch(s, X_test);
        mean += l;
        r.gibbs += (l - l0).squaredNorm() / n;
        r.student_power += l.squaredNorm() / n;
        r.cross += -2.0 * l.dot(l0) / n;
    }
    const double S = (double)samples.size();
    r.gibbs /= S;
    r.student_power /= S;
    r.cross /= S;
    r.bayes_proxy = r.gibbs / 2;
    r.bayes_mean = (mean / S - l0).squaredNorm() / n;
    return r;
}

TeacherParams with_weights(const TeacherParams& base, const Eigen::MatrixXd& W) {
    TeacherParams t = base;
    if (t.W.size() != 1 || W.rows() != t.W[0].rows() || W.cols() != t.W[0].cols())
        throw std::invalid_argument("with_weights: shape mismatch");
    t.W[0] = W;
    return t;
}

MetropolisResult metropolis_sample(const Dataset& data, const MetropolisConfig& cfg) {
    const auto& th = data.teacher;
    if (th.W.size() != 1) throw std::domain_error("metropolis_sample: only one hidden layer is supported");
    const auto& wp = data.weight_prior;
    if (wp.kind == WeightPrior::Kind::Gaussian || wp.values.size() != 2 || wp.values[0] != -wp.values[1])
        throw std::domain_error("metropolis_sample: needs a symmetric binary weight prior");
    if (cfg.max_sweeps < 0 || cfg.thin < 1 || cfg.n_test < 1) throw std::invalid_argument("metropolis_sample: bad config");
    const int n = data.n(), d = data.d(), k = (int)th.W[0].rows();
    const double sd = std::sqrt((double)d), sk = std::sqrt((double)k), beta = 1.0 / data.delta;
    const auto& act = th.arch.act;

    auto rng = stream(cfg.seed, 7);
    Eigen::MatrixXd W = th.W[0];
    if (!cfg.init_teacher)
        for (int j = 0; j < d; ++j)
            for (int i = 0; i < k; ++i) W(i, j) = draw_weight(wp, rng);

    Eigen::MatrixXd X_test = sample_inputs(cfg.n_test, d, data.covariance, cfg.seed ^ 0x7e57ULL);
    Eigen::VectorXd l0 = forward_batch(th, X_test);
    auto half_gibbs = [&]() {
        Eigen::MatrixXd S = apply(act, W * X_test.transpose() / sd);
        Eigen::VectorXd l = (th.v.transpose() * S).transpose() / sk;
        return 0.5 * (l - l0).squaredNorm() / (double)cfg.n_test;
    };

    // cached pre-activations (n x k), post-activations and residuals
    Eigen::MatrixXd H = data.X * W.transpose() / sd;
    Eigen::MatrixXd S = apply(act, H);
    Eigen::VectorXd r = data.y - S * th.v / sk;
    Eigen::VectorXd hn(n), sn(n), dl(n);
    std::uniform_int_distribution<int> pick_i(0, k - 1), pick_j(0, d - 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    MetropolisResult res;
    long accepted = 0, proposed = 0;
    for (int sweep = 1; sweep <= cfg.max_sweeps; ++sweep) {
        for (int t = 0; t < k * d; ++t) {
            int i = pick_i(rng), j = pick_j(rng);
            double dw = -2.0 * W(i, j) / sd;
            double scale = th.v[i] / sk;
            double dE = 0.0;
            for (int m = 0; m < n; ++m) {
                hn[m] = H(m, i) + dw * data.X(m, j);
                sn[m] = act.eval(hn[m]);
                dl[m] = scale * (sn[m] - S(m, i));
                dE += dl[m] * (0.5 * dl[m] - r[m]);
            }
            ++proposed;
            if (dE <= 0 || unif(rng) < std::exp(-beta * dE)) {
                ++accepted;
                W(i, j) = -W(i, j);
                H.col(i) = hn;
                S.col(i) = sn;
                r -= dl;
            }
        }
        res.half_gibbs.push_back(half_gibbs());
        res.sweeps = sweep;
        if (sweep % cfg.thin == 0) {
            res.samples.push_back(W);
            res.sample_sweeps.push_back(sweep);
        }
        const int w = cfg.plateau_window;
        if (w > 0 && sweep >= 2 * w && sweep % w == 0) {
            double a = 0, b = 0;
            for (int s = sweep - 2 * w; s < sweep - w; ++s) a += res.half_gibbs[s];
            for (int s = sweep - w; s < sweep; ++s) b += res.half_gibbs[s];
            if (a > 0 && std::abs(b - a) / a < cfg.plateau_tol) {
                res.plateau_stop = true;
                break;
            }
        }
    }
    res.acceptance = proposed ? (double)accepted / proposed : 0.0;
    return res;
}

std::vector<double> nishimori_deviation(const MetropolisResult& a, const MetropolisResult& b, const TeacherParams& teacher,
                                        const Eigen::MatrixXd& X_test) {
    if (X_test.rows() == 0) throw std::invalid_argument("nishimori_deviation: empty test set");
    const std::size_t T = std::min(a.samples.size(), b.samples.size());
    Eigen::VectorXd l0 = forward_batch(teacher, X_test);
    std::vector<double> out;
    for (std::size_t t = 0; t < T; ++t) {
        Eigen::VectorXd l1 = forward_batch(with_weights(teacher, a.samples[t]), X_test);
        Eigen::VectorXd l2 = forward_batch(with_weights(teacher, b.samples[t]), X_test);
        double den = (l1 - l0).squaredNorm();
        out.push_back(den > 1e-300 ? (l1 - l2).squaredNorm() / den - 1.0 : NAN);
    }
    return out;
}

}  // namespace rsmlp
