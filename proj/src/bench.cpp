#include "gapcast/bench.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gapcast/dist.hpp"
#include "gapcast/errors.hpp"
#include "gapcast/forecast.hpp"

namespace gapcast::bench {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uint64_t kGaussShuffle = 31;
constexpr std::uint64_t kGaussInit = 32;

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<double> least_squares(const Matrix& a, const Eigen::VectorXd& b) {
    Eigen::VectorXd beta = a.colPivHouseholderQr().solve(b);
    return {beta.data(), beta.data() + beta.size()};
}

std::vector<double> default_qr_taus() {
    std::vector<double> t;
    for (int i = 1; i <= 19; ++i) t.push_back(i / 20.0);
    return t;
}

} // namespace

RegressionData regression_data(std::span<const data::Window> windows, bool drop_missing_targets) {
    RegressionData out;
    if (windows.empty()) throw ValidationError("regression_data: no windows");
    const std::size_t p = windows.front().dim() - 1;
    std::vector<const data::Window*> kept;
    for (const auto& w : windows) {
        if (!(drop_missing_targets && w.target_missing())) kept.push_back(&w);
    }
    out.features = ad::Tensor(kept.size(), p);
    out.targets.reserve(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            out.features(i, j) = kept[i]->mask[j] ? kNaN : kept[i]->values[j];
        }
        out.targets.push_back(kept[i]->target_missing() ? kNaN : kept[i]->values.back());
    }
    return out;
}

std::vector<double> climatology_ensemble(std::span<const double> history, std::size_t M, Rng& rng) {
    std::vector<double> pool;
    for (double v : history) {
        if (std::isfinite(v)) pool.push_back(v);
    }
    if (pool.empty()) throw ValidationError("climatology: no observed history");
    if (M == 0) throw ValidationError("climatology: M must be at least 1");
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::vector<double> out(M);
    for (double& v : out) v = pool[pick(rng)];
    return out;
}

Imputer::Imputer(ImputerKind kind, std::size_t max_iterations, double tolerance)
    : kind_(kind), max_iterations_(max_iterations), tolerance_(tolerance) {}

void Imputer::fit(const ad::Tensor& x) { iterate(x, true); }

ad::Tensor Imputer::fit_transform(const ad::Tensor& x) { return iterate(x, true); }

ad::Tensor Imputer::transform(const ad::Tensor& x) const {
    if (!fitted()) throw ValidationError("imputer used before fit");
    Imputer copy = *this;
    return copy.iterate(x, false);
}

ad::Tensor Imputer::iterate(const ad::Tensor& x, bool refit) {
    const std::size_t n = x.rows();
    const std::size_t p = x.cols();
    if (refit) {
        means_.assign(p, 0.0);
        for (std::size_t j = 0; j < p; ++j) {
            double s = 0.0;
            std::size_t c = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (std::isfinite(x(i, j))) {
                    s += x(i, j);
                    ++c;
                }
            }
            if (c == 0) throw ValidationError("imputer: column " + std::to_string(j) + " has no observed value");
            means_[j] = s / static_cast<double>(c);
        }
        coefficients_.assign(p, {});
    } else if (p != means_.size()) {
        throw ValidationError("imputer: fitted on " + std::to_string(means_.size()) + " columns, got " +
                              std::to_string(p));
    }

    ad::Tensor out = x;
    std::vector<std::uint8_t> miss(n * p, 0);
    bool any_missing = false;
    for (std::size_t i = 0; i < n * p; ++i) {
        if (!std::isfinite(out[i])) {
            miss[i] = 1;
            out[i] = means_[i % p];
            any_missing = true;
        }
    }
    if (kind_ == ImputerKind::Mean || p < 2 || (!any_missing && !refit)) return out;

    for (std::size_t it = 0; it < max_iterations_; ++it) {
        double max_change = 0.0;
        for (std::size_t j = 0; j < p; ++j) {
            if (refit) {
                std::vector<std::size_t> rows;
                for (std::size_t i = 0; i < n; ++i) {
                    if (!miss[i * p + j]) rows.push_back(i);
                }
                Matrix a(rows.size(), p);
                Eigen::VectorXd b(rows.size());
                for (std::size_t r = 0; r < rows.size(); ++r) {
                    a(r, 0) = 1.0;
                    for (std::size_t c = 0, k = 1; c < p; ++c) {
                        if (c != j) a(r, k++) = out(rows[r], c);
                    }
                    b(r) = out(rows[r], j);
                }
                coefficients_[j] = least_squares(a, b);
            }
            const auto& beta = coefficients_[j];
            for (std::size_t i = 0; i < n; ++i) {
                if (!miss[i * p + j]) continue;
                double v = beta[0];
                for (std::size_t c = 0, k = 1; c < p; ++c) {
                    if (c != j) v += beta[k++] * out(i, c);
                }
                max_change = std::max(max_change, std::abs(v - out(i, j)));
                out(i, j) = v;
            }
        }
        if (max_change < tolerance_) break;
    }
    return out;
}

Standardizer Standardizer::fit(const ad::Tensor& x) {
    Standardizer s;
    const std::size_t n = x.rows();
    const std::size_t p = x.cols();
    s.mean.assign(p, 0.0);
    s.scale.assign(p, 1.0);
    if (n == 0) return s;
    for (std::size_t j = 0; j < p; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += x(i, j);
        m /= static_cast<double>(n);
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) v += (x(i, j) - m) * (x(i, j) - m);
        v /= static_cast<double>(n);
        s.mean[j] = m;
        s.scale[j] = v > 1e-24 ? std::sqrt(v) : 1.0;
    }
    return s;
}

ad::Tensor Standardizer::apply(const ad::Tensor& x) const {
    if (x.cols() != mean.size()) throw ValidationError("standardizer: column count mismatch");
    ad::Tensor out = x;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = (x(i, j) - mean[j]) / scale[j];
    }
    return out;
}

void QuantileRegressor::fit(const ad::Tensor& x, std::span<const double> y, const QrConfig& cfg) {
    if (x.rows() == 0 || x.rows() != y.size()) throw ValidationError("quantile regression: empty or misaligned data");
    if (!x.all_finite()) throw ValidationError("quantile regression: features must be complete");
    taus_ = cfg.taus.empty() ? default_qr_taus() : cfg.taus;
    standardizer_ = Standardizer::fit(x);
    const ad::Tensor xs = standardizer_.apply(x);
    const std::size_t n = xs.rows();
    const std::size_t p = xs.cols() + 1;
    std::vector<double> sorted_y(y.begin(), y.end());
    std::sort(sorted_y.begin(), sorted_y.end());

    coef_ = ad::Tensor(taus_.size(), p);
    for (std::size_t t = 0; t < taus_.size(); ++t) {
        const double tau = taus_[t];
        nn::Parameter beta{"qr", ad::Tensor(1, p)};
        beta.value[0] = forecast::quantile_sorted(sorted_y, tau);
        nn::Parameter* params[] = {&beta};
        nn::AdamState adam({cfg.learning_rate, 0.9, 0.999, 1e-8, 0.0}, params);
        ad::Tensor grad(1, p);
        std::vector<double> avg(p, 0.0);
        std::size_t averaged = 0;
        for (std::size_t it = 0; it < cfg.iterations; ++it) {
            std::fill(grad.data().begin(), grad.data().end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                double qi = beta.value[0];
                for (std::size_t j = 1; j < p; ++j) qi += beta.value[j] * xs(i, j - 1);
                // pinball subgradient in q; zero at a kink
                const double g = y[i] > qi ? -tau : (y[i] < qi ? 1.0 - tau : 0.0);
                grad[0] += g;
                for (std::size_t j = 1; j < p; ++j) grad[j] += g * xs(i, j - 1);
            }
            for (auto& g : grad.data()) g /= static_cast<double>(n);
            const ad::Tensor grads[] = {grad};
            adam.step(params, grads);
            if (2 * it >= cfg.iterations) {
                for (std::size_t j = 0; j < p; ++j) avg[j] += beta.value[j];
                ++averaged;
            }
        }
        for (std::size_t j = 0; j < p; ++j) {
            coef_(t, j) = averaged ? avg[j] / static_cast<double>(averaged) : beta.value[j];
        }
    }
    if (!coef_.all_finite()) throw NumericalError("quantile regression diverged");
}

std::vector<double> QuantileRegressor::predict(std::span<const double> x) const {
    if (x.size() + 1 != coef_.cols()) throw ValidationError("quantile regression: feature count mismatch");
    std::vector<double> q(taus_.size());
    for (std::size_t t = 0; t < taus_.size(); ++t) {
        double v = coef_(t, 0);
        for (std::size_t j = 0; j < x.size(); ++j) {
            v += coef_(t, j + 1) * (x[j] - standardizer_.mean[j]) / standardizer_.scale[j];
        }
        q[t] = v;
    }
    std::sort(q.begin(), q.end());
    return q;
}

std::vector<double> sample_from_quantiles(std::span<const double> taus, std::span<const double> quantiles,
                                          std::size_t M) {
    if (taus.empty() || taus.size() != quantiles.size()) throw ValidationError("sample_from_quantiles: bad grid");
    if (M == 0) throw ValidationError("sample_from_quantiles: M must be at least 1");
    std::vector<double> out(M);
    const std::size_t g = taus.size();
    auto slope = [&](std::size_t i) { return (quantiles[i + 1] - quantiles[i]) / (taus[i + 1] - taus[i]); };
    for (std::size_t m = 0; m < M; ++m) {
        const double u = (static_cast<double>(m) + 0.5) / static_cast<double>(M);
        if (g == 1) {
            out[m] = quantiles[0];
        } else if (u <= taus[0]) {
            out[m] = quantiles[0] + slope(0) * (u - taus[0]);
        } else if (u >= taus[g - 1]) {
            out[m] = quantiles[g - 1] + slope(g - 2) * (u - taus[g - 1]);
        } else {
            const auto it = std::upper_bound(taus.begin(), taus.end(), u);
            const std::size_t i = static_cast<std::size_t>(it - taus.begin()) - 1;
            out[m] = quantiles[i] + slope(i) * (u - taus[i]);
        }
    }
    return out;
}

void GaussianRegressor::fit(const ad::Tensor& x, std::span<const double> y, const GaussConfig& cfg) {
    if (x.rows() == 0 || x.rows() != y.size()) throw ValidationError("gaussian regression: empty or misaligned data");
    if (!x.all_finite()) throw ValidationError("gaussian regression: features must be complete");
    if (cfg.batch_size == 0) throw ValidationError("gaussian regression: batch size must be positive");
    standardizer_ = Standardizer::fit(x);
    const ad::Tensor xs = standardizer_.apply(x);
    std::vector<std::size_t> widths{xs.cols()};
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(2);
    net_ = nn::Mlp::init_params(derive_seed(cfg.seed, {kGaussInit}), widths, "gauss");

    std::vector<nn::Parameter*> params;
    net_.collect(params);
    nn::AdamConfig ac;
    ac.learning_rate = cfg.learning_rate;
    nn::AdamState adam(ac, params);

    const std::size_t n = xs.rows();
    std::vector<std::size_t> order(n);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng = make_rng(cfg.seed, {kGaussShuffle, epoch});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t b = std::min(cfg.batch_size, n - start);
            ad::Tensor xb(b, xs.cols()), yb(b, 1);
            for (std::size_t i = 0; i < b; ++i) {
                const auto src = xs.row_span(order[start + i]);
                std::copy(src.begin(), src.end(), xb.row_span(i).begin());
                yb[i] = y[order[start + i]];
            }
            ad::Tape tape;
            auto bound = net_.bind(tape, true);
            ad::Var out = nn::mlp_forward(bound, tape.constant(std::move(xb))).output;
            dist::DiagGaussian g{ad::slice(out, 1, 0, 1),
                                 ad::add_scalar(ad::softplus(ad::slice(out, 1, 1, 2)), dist::kMinScale)};
            ad::Var loss = ad::scale(ad::sum(dist::gaussian_logpdf(g, tape.constant(std::move(yb)))),
                                     -1.0 / static_cast<double>(b));
            auto grads = tape.backward(loss);
            std::vector<ad::Tensor> gs;
            for (std::size_t l = 0; l < bound.weights.size(); ++l) {
                gs.push_back(grads.wrt(bound.weights[l]));
                gs.push_back(grads.wrt(bound.biases[l]));
            }
            adam.step(params, gs);
        }
    }
}

std::pair<double, double> GaussianRegressor::predict(std::span<const double> x) const {
    ad::Tensor row(1, x.size());
    for (std::size_t j = 0; j < x.size(); ++j) row[j] = x[j];
    ad::Tape tape;
    auto bound = net_.bind(tape, false);
    const auto& out = nn::mlp_forward(bound, tape.constant(standardizer_.apply(row))).output.value();
    const double raw = out[1];
    const double softplus = raw > 30.0 ? raw : std::log1p(std::exp(raw));
    return {out[0], softplus + dist::kMinScale};
}

std::vector<double> GaussianRegressor::sample(std::span<const double> x, std::size_t M, Rng& rng) const {
    auto [mu, sigma] = predict(x);
    std::normal_distribution<double> normal(mu, sigma);
    std::vector<double> out(M);
    for (double& v : out) v = normal(rng);
    return out;
}

QuantileRegressor reference_model(std::span<const data::Window> complete_windows, const QrConfig& cfg) {
    for (const auto& w : complete_windows) {
        if (std::any_of(w.mask.begin(), w.mask.end(), [](std::uint8_t m) { return m != 0; })) {
            throw ValidationError("reference model requires complete windows; found a gap at origin " +
                                  data::format_timestamp(w.origin));
        }
    }
    auto rd = regression_data(complete_windows);
    QuantileRegressor qr;
    qr.fit(rd.features, rd.targets, cfg);
    return qr;
}

} // namespace gapcast::bench
