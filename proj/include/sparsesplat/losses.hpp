#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "image.hpp"
#include "rasterizer.hpp"

namespace sparsesplat {

// How each depth tile's correlation becomes a loss.
enum class DepthLossForm {
    one_minus_corr, // 1 - Corr: rewards agreement
    abs_corr,       // |Corr| taken literally, minimized at zero correlation
};

struct LossWeights {
    double lambda_l1 = 0.8;
    double gamma_dssim = 0.2;
    double beta_gdepth = 0.05;
    double omega_0 = 1.0;
    double omega_sem = 0.6;
    double omega_depth = 0.5;
    double epsilon = 1e-8;
    int patch_size = 126;
    DepthLossForm depth_form = DepthLossForm::one_minus_corr;

    void validate() const {
        const std::array<std::pair<const char*, double>, 6> ws{{{"lambda_l1", lambda_l1},
                                                                {"gamma_dssim", gamma_dssim},
                                                                {"beta_gdepth", beta_gdepth},
                                                                {"omega_0", omega_0},
                                                                {"omega_sem", omega_sem},
                                                                {"omega_depth", omega_depth}}};
        for (const auto& [name, v] : ws) {
            if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be >= 0");
        }
        if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
        if (patch_size < 2) throw ConfigError("patch_size must be >= 2");
    }
};

// Value of an image loss plus its gradient w.r.t. the rendered argument.
struct ImageLoss {
    double value = 0.0;
    Image grad;
};

inline ImageLoss l1_color(const Image& rendered, const Image& reference) {
    require_same_shape(rendered, reference, "l1_color");
    ImageLoss out{0.0, Image(rendered.width, rendered.height, rendered.channels)};
    const double n = static_cast<double>(rendered.size());
    if (n == 0) throw InvalidInputError("l1_color: empty image");
    double sum = 0.0;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        const double d = rendered.data[i] - reference.data[i];
        sum += std::abs(d);
        out.grad.data[i] = (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / n;
    }
    out.value = sum / n;
    return out;
}

// ---------------------------------------------------------------------------
// SSIM with an 11x11 Gaussian window (sigma 1.5) over valid window positions only.

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

inline std::array<double, kSsimWindow> ssim_kernel_1d() {
    std::array<double, kSsimWindow> k{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        k[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += k[i];
    }
    for (auto& v : k) v /= sum;
    return k;
}

namespace detail {

// Separable valid-mode Gaussian filter of one channel plane (w x h -> (w-10) x (h-10)).
inline std::vector<double> ssim_filter(const std::vector<double>& plane, int w, int h) {
    static const auto k = ssim_kernel_1d();
    const int wv = w - kSsimWindow + 1;
    const int hv = h - kSsimWindow + 1;
    std::vector<double> tmp(static_cast<std::size_t>(wv) * h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < wv; ++x) {
            double s = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) s += k[i] * plane[static_cast<std::size_t>(y) * w + x + i];
            tmp[static_cast<std::size_t>(y) * wv + x] = s;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(wv) * hv);
    for (int y = 0; y < hv; ++y) {
        for (int x = 0; x < wv; ++x) {
            double s = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * wv + x];
            out[static_cast<std::size_t>(y) * wv + x] = s;
        }
    }
    return out;
}

// Adjoint of ssim_filter: scatters window coefficients back onto the w x h plane.
inline std::vector<double> ssim_filter_adjoint(const std::vector<double>& coeff, int w, int h) {
    static const auto k = ssim_kernel_1d();
    const int wv = w - kSsimWindow + 1;
    const int hv = h - kSsimWindow + 1;
    std::vector<double> tmp(static_cast<std::size_t>(wv) * h, 0.0);
    for (int y = 0; y < hv; ++y) {
        for (int x = 0; x < wv; ++x) {
            const double c = coeff[static_cast<std::size_t>(y) * wv + x];
            for (int i = 0; i < kSsimWindow; ++i) tmp[static_cast<std::size_t>(y + i) * wv + x] += k[i] * c;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(w) * h, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < wv; ++x) {
            const double c = tmp[static_cast<std::size_t>(y) * wv + x];
            for (int i = 0; i < kSsimWindow; ++i) out[static_cast<std::size_t>(y) * w + x + i] += k[i] * c;
        }
    }
    return out;
}

inline std::vector<double> channel_plane(const Image& img, int c) {
    std::vector<double> p(img.pixel_count());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = img.data[i * img.channels + c];
    return p;
}

inline void check_ssim_inputs(const Image& a, const Image& b) {
    require_same_shape(a, b, "ssim");
    if (a.width < kSsimWindow || a.height < kSsimWindow) {
        throw InvalidInputError("ssim: image " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                                " is smaller than the 11x11 window");
    }
}

// Mean SSIM and, when requested, its gradient w.r.t. `x`.
inline double ssim_impl(const Image& x, const Image& y, Image* grad) {
    check_ssim_inputs(x, y);
    const int w = x.width, h = x.height;
    const std::size_t nwin = static_cast<std::size_t>(w - kSsimWindow + 1) * (h - kSsimWindow + 1);
    const double n = static_cast<double>(nwin) * x.channels;
    double total = 0.0;
    if (grad) *grad = Image(w, h, x.channels);
    for (int c = 0; c < x.channels; ++c) {
        const auto px = channel_plane(x, c);
        const auto py = channel_plane(y, c);
        std::vector<double> xx(px.size()), yy(px.size()), xy(px.size());
        for (std::size_t i = 0; i < px.size(); ++i) {
            xx[i] = px[i] * px[i];
            yy[i] = py[i] * py[i];
            xy[i] = px[i] * py[i];
        }
        const auto mx = ssim_filter(px, w, h);
        const auto my = ssim_filter(py, w, h);
        const auto mxx = ssim_filter(xx, w, h);
        const auto myy = ssim_filter(yy, w, h);
        const auto mxy = ssim_filter(xy, w, h);
        std::vector<double> g_m1, g_m11, g_m12;
        if (grad) {
            g_m1.resize(nwin);
            g_m11.resize(nwin);
            g_m12.resize(nwin);
        }
        for (std::size_t i = 0; i < nwin; ++i) {
            const double s11 = mxx[i] - mx[i] * mx[i];
            const double s22 = myy[i] - my[i] * my[i];
            const double s12 = mxy[i] - mx[i] * my[i];
            const double a1 = 2.0 * mx[i] * my[i] + kSsimC1;
            const double a2 = 2.0 * s12 + kSsimC2;
            const double b1 = mx[i] * mx[i] + my[i] * my[i] + kSsimC1;
            const double b2 = s11 + s22 + kSsimC2;
            const double s = (a1 * a2) / (b1 * b2);
            total += s;
            if (grad) {
                const double d_mu = 2.0 * my[i] * a2 / (b1 * b2) - s * 2.0 * mx[i] / b1;
                const double d_s11 = -s / b2;
                const double d_s12 = 2.0 * a1 / (b1 * b2);
                g_m1[i] = d_mu + d_s11 * (-2.0 * mx[i]) + d_s12 * (-my[i]);
                g_m11[i] = d_s11;
                g_m12[i] = d_s12;
            }
        }
        if (grad) {
            const auto a = ssim_filter_adjoint(g_m1, w, h);
            const auto b = ssim_filter_adjoint(g_m11, w, h);
            const auto d = ssim_filter_adjoint(g_m12, w, h);
            for (std::size_t i = 0; i < px.size(); ++i) {
                grad->data[i * x.channels + c] = (a[i] + 2.0 * px[i] * b[i] + py[i] * d[i]) / n;
            }
        }
    }
    return total / n;
}

} // namespace detail

inline double ssim_mean(const Image& rendered, const Image& reference) {
    return detail::ssim_impl(rendered, reference, nullptr);
}

// 1 - mean SSIM, gradient w.r.t. `rendered`.
inline ImageLoss d_ssim(const Image& rendered, const Image& reference) {
    ImageLoss out;
    const double s = detail::ssim_impl(rendered, reference, &out.grad);
    out.value = 1.0 - s;
    for (auto& g : out.grad.data) g = -g;
    return out;
}

// ---------------------------------------------------------------------------
// Pearson correlation and local normalization.

struct PearsonResult {
    double value = 0.0;
    std::vector<double> grad_a;
    std::vector<double> grad_b;
};

// Population Pearson correlation with variances floored at epsilon^2.
inline PearsonResult pearson_with_grad(std::span<const double> a, std::span<const double> b, double epsilon = 1e-8,
                                       bool want_grad = true) {
    if (a.size() != b.size()) throw DimensionMismatchError("pearson: length mismatch");
    if (a.size() < 2) throw InvalidInputError("pearson: need at least two samples");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    cov /= n;
    va /= n;
    vb /= n;
    const double floor = epsilon * epsilon;
    const bool va_live = va > floor, vb_live = vb > floor;
    const double vaf = va_live ? va : floor;
    const double vbf = vb_live ? vb : floor;
    const double denom = std::sqrt(vaf * vbf);
    PearsonResult r;
    r.value = cov / denom;
    if (want_grad) {
        r.grad_a.resize(a.size());
        r.grad_b.resize(b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double da = a[i] - ma, db = b[i] - mb;
            r.grad_a[i] = db / (n * denom) - (va_live ? r.value * da / (n * vaf) : 0.0);
            r.grad_b[i] = da / (n * denom) - (vb_live ? r.value * db / (n * vbf) : 0.0);
        }
    }
    return r;
}

inline double pearson(std::span<const double> a, std::span<const double> b, double epsilon = 1e-8) {
    return pearson_with_grad(a, b, epsilon, false).value;
}

struct PatchStats {
    double mean = 0.0;
    double stddev = 0.0; // population
};

inline PatchStats patch_stats(std::span<const double> patch) {
    PatchStats s;
    const double n = static_cast<double>(patch.size());
    s.mean = std::accumulate(patch.begin(), patch.end(), 0.0) / n;
    double v = 0.0;
    for (double d : patch) v += (d - s.mean) * (d - s.mean);
    s.stddev = std::sqrt(v / n);
    return s;
}

// (d - mean) / (stddev + epsilon) over the patch.
inline std::vector<double> local_normalize(std::span<const double> patch, double epsilon) {
    if (patch.empty()) throw InvalidInputError("local_normalize: empty patch");
    const PatchStats s = patch_stats(patch);
    std::vector<double> out(patch.size());
    for (std::size_t i = 0; i < patch.size(); ++i) out[i] = (patch[i] - s.mean) / (s.stddev + epsilon);
    return out;
}

// Pulls a gradient on local_normalize(patch) back onto the patch (stddev > 0).
inline std::vector<double> local_normalize_vjp(std::span<const double> patch, double epsilon,
                                               std::span<const double> g_out) {
    const PatchStats s = patch_stats(patch);
    const double n = static_cast<double>(patch.size());
    const double denom = s.stddev + epsilon;
    const double g_mean = std::accumulate(g_out.begin(), g_out.end(), 0.0) / n;
    double g_dot_c = 0.0;
    for (std::size_t i = 0; i < patch.size(); ++i) g_dot_c += g_out[i] * (patch[i] - s.mean);
    std::vector<double> g(patch.size());
    for (std::size_t i = 0; i < patch.size(); ++i) {
        g[i] = (g_out[i] - g_mean) / denom - g_dot_c / (denom * denom) * (patch[i] - s.mean) / (n * s.stddev);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Depth losses.

inline constexpr double kConstantTileStd = 1e-6;

struct DepthLoss {
    double value = 0.0;
    Image grad; // w.r.t. the rendered depth map
    int tiles_used = 0;
    int tiles_skipped = 0; // constant or too few valid pixels
};

namespace detail {

struct TileTerm {
    double value = 0.0;
    bool used = false;
};

// Correlation loss over the listed pixel indices; accumulates scaled gradient into grad.
inline TileTerm correlation_term(const Image& rendered, const DepthMap& prior, const std::vector<std::size_t>& idx,
                                 double epsilon, DepthLossForm form, std::vector<double>& grad_out,
                                 std::vector<std::size_t>& idx_out) {
    TileTerm t;
    if (idx.size() < 2) return t;
    std::vector<double> r(idx.size()), p(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        r[k] = rendered.data[idx[k]];
        p[k] = prior.values.data[idx[k]];
    }
    if (patch_stats(r).stddev < kConstantTileStd || patch_stats(p).stddev < kConstantTileStd) return t;
    const auto rn = local_normalize(r, epsilon);
    const auto pn = local_normalize(p, epsilon);
    const PearsonResult corr = pearson_with_grad(pn, rn, epsilon);
    double dloss_dcorr = -1.0;
    if (form == DepthLossForm::one_minus_corr) {
        t.value = 1.0 - corr.value;
    } else {
        t.value = std::abs(corr.value);
        dloss_dcorr = corr.value > 0 ? 1.0 : (corr.value < 0 ? -1.0 : 0.0);
    }
    std::vector<double> g_rn(rn.size());
    for (std::size_t k = 0; k < rn.size(); ++k) g_rn[k] = dloss_dcorr * corr.grad_b[k];
    grad_out = local_normalize_vjp(r, epsilon, g_rn);
    idx_out = idx;
    t.used = true;
    return t;
}

inline void check_depth_inputs(const Image& rendered, const DepthMap& prior, const char* what) {
    if (rendered.channels != 1 || rendered.width != prior.width() || rendered.height != prior.height()) {
        throw DimensionMismatchError(std::string(what) + ": rendered and prior depth sizes differ");
    }
    for (double v : rendered.data) {
        if (!std::isfinite(v)) throw InvalidInputError(std::string(what) + ": rendered depth is not finite");
    }
}

} // namespace detail

// Mean over non-overlapping patch_size tiles of the per-tile correlation loss between
// the locally normalized prior and rendered depth.
inline DepthLoss local_depth_loss(const Image& rendered, const DepthMap& prior, int patch_size,
                                  double epsilon = 1e-8, DepthLossForm form = DepthLossForm::one_minus_corr) {
    detail::check_depth_inputs(rendered, prior, "local_depth_loss");
    if (patch_size < 2) throw InvalidInputError("local_depth_loss: patch_size must be >= 2");
    const int w = rendered.width, h = rendered.height;
    DepthLoss out;
    out.grad = Image(w, h, 1);
    std::vector<std::pair<std::vector<std::size_t>, std::vector<double>>> grads;
    double sum = 0.0;
    for (int y0 = 0; y0 < h; y0 += patch_size) {
        for (int x0 = 0; x0 < w; x0 += patch_size) {
            const int tw = std::min(patch_size, w - x0);
            const int th = std::min(patch_size, h - y0);
            if (tw < 2 || th < 2) continue; // sliver at the border
            std::vector<std::size_t> idx;
            for (int y = y0; y < y0 + th; ++y) {
                for (int x = x0; x < x0 + tw; ++x) {
                    const std::size_t p = static_cast<std::size_t>(y) * w + x;
                    if (prior.valid.empty() || prior.valid[p]) idx.push_back(p);
                }
            }
            std::vector<double> g;
            std::vector<std::size_t> gi;
            const auto term = detail::correlation_term(rendered, prior, idx, epsilon, form, g, gi);
            if (!term.used) {
                ++out.tiles_skipped;
                continue;
            }
            ++out.tiles_used;
            sum += term.value;
            grads.emplace_back(std::move(gi), std::move(g));
        }
    }
    if (out.tiles_used == 0) throw NoSignalError("local_depth_loss: every tile is degenerate");
    out.value = sum / out.tiles_used;
    for (const auto& [idx, g] : grads) {
        for (std::size_t k = 0; k < idx.size(); ++k) out.grad.data[idx[k]] += g[k] / out.tiles_used;
    }
    return out;
}

// 1 - Corr over the whole (normalized) map.
inline DepthLoss global_depth_loss(const Image& rendered, const DepthMap& prior, double epsilon = 1e-8) {
    detail::check_depth_inputs(rendered, prior, "global_depth_loss");
    DepthLoss out;
    out.grad = Image(rendered.width, rendered.height, 1);
    std::vector<std::size_t> idx;
    for (std::size_t p = 0; p < rendered.pixel_count(); ++p) {
        if (prior.valid.empty() || prior.valid[p]) idx.push_back(p);
    }
    std::vector<double> g;
    std::vector<std::size_t> gi;
    const auto term =
        detail::correlation_term(rendered, prior, idx, epsilon, DepthLossForm::one_minus_corr, g, gi);
    if (!term.used) throw NoSignalError("global_depth_loss: constant depth map");
    out.value = term.value;
    out.tiles_used = 1;
    for (std::size_t k = 0; k < gi.size(); ++k) out.grad.data[gi[k]] = g[k];
    return out;
}

// ---------------------------------------------------------------------------
// Semantic term.

struct SemanticLoss {
    double value = 0.0;
    std::vector<double> grad; // w.r.t. the side-view embedding
};

inline SemanticLoss semantic_loss(const FeatureEmbedding& side, const FeatureEmbedding& train) {
    if (side.dim() != train.dim()) throw DimensionMismatchError("semantic_loss: embedding sizes differ");
    SemanticLoss out;
    out.grad.resize(side.dim());
    for (std::size_t i = 0; i < side.dim(); ++i) {
        const double d = side.values[i] - train.values[i];
        out.value += d * d;
        out.grad[i] = 2.0 * d;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Total objective.

// Inputs contributed by one side view. Pointers are borrowed and may be null when the
// corresponding prior is unavailable.
struct SideTerm {
    const FeatureEmbedding* side_embedding = nullptr;
    const FeatureEmbedding* train_embedding = nullptr;
    const Image* rendered_depth = nullptr;
    const DepthMap* prior_depth = nullptr;
};

struct LossBreakdown {
    double total = 0.0;
    double l1 = 0.0;
    double dssim = 0.0;
    double global_depth = 0.0;
    double semantic = 0.0;
    double local_depth = 0.0;

    Image grad_color;                              // training render color
    Image grad_depth;                              // training render depth
    std::vector<std::vector<double>> grad_side_embedding;
    std::vector<Image> grad_side_depth;            // empty Image when unused

    int depth_views_used = 0;
    int depth_views_skipped = 0; // every tile degenerate
};

// omega_0 (lambda l1 + gamma dssim + beta global) + omega_sem semantic + omega_depth local.
inline double weighted_total(const LossBreakdown& b, const LossWeights& weights) {
    return weights.omega_0 * (weights.lambda_l1 * b.l1 + weights.gamma_dssim * b.dssim +
                              weights.beta_gdepth * b.global_depth) +
           weights.omega_sem * b.semantic + weights.omega_depth * b.local_depth;
}

inline LossBreakdown total_loss(const RenderOutput& render_train, const Image& gt, const DepthMap* prior_depth_train,
                                const std::vector<SideTerm>& side_terms, const LossWeights& weights) {
    weights.validate();
    LossBreakdown b;
    const int w = render_train.color.width, h = render_train.color.height;
    b.grad_color = Image(w, h, 3);
    b.grad_depth = Image(w, h, 1);
    b.grad_side_embedding.resize(side_terms.size());
    b.grad_side_depth.resize(side_terms.size());

    auto add_scaled = [](Image& dst, const Image& src, double s) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += s * src.data[i];
    };

    const ImageLoss l1 = l1_color(render_train.color, gt);
    b.l1 = l1.value;
    add_scaled(b.grad_color, l1.grad, weights.omega_0 * weights.lambda_l1);

    if (weights.gamma_dssim > 0.0) {
        const ImageLoss ds = d_ssim(render_train.color, gt);
        b.dssim = ds.value;
        add_scaled(b.grad_color, ds.grad, weights.omega_0 * weights.gamma_dssim);
    }
    if (weights.beta_gdepth > 0.0) {
        if (!prior_depth_train) throw ConfigError("global depth weight is nonzero but the training view has no depth prior");
        const DepthLoss gd = global_depth_loss(render_train.depth, *prior_depth_train, weights.epsilon);
        b.global_depth = gd.value;
        add_scaled(b.grad_depth, gd.grad, weights.omega_0 * weights.beta_gdepth);
    }

    if (weights.omega_sem > 0.0 && !side_terms.empty()) {
        const double scale = 1.0 / static_cast<double>(side_terms.size());
        for (std::size_t s = 0; s < side_terms.size(); ++s) {
            const SideTerm& t = side_terms[s];
            if (!t.side_embedding || !t.train_embedding) {
                throw ConfigError("semantic weight is nonzero but a side view has no embeddings");
            }
            SemanticLoss sl = semantic_loss(*t.side_embedding, *t.train_embedding);
            b.semantic += scale * sl.value;
            for (double& g : sl.grad) g *= weights.omega_sem * scale;
            b.grad_side_embedding[s] = std::move(sl.grad);
        }
    }

    if (weights.omega_depth > 0.0) {
        struct Pending {
            Image* grad;
            DepthLoss loss;
        };
        std::vector<Pending> used;
        bool any_prior = false;
        auto try_view = [&](const Image& rendered, const DepthMap* prior, Image* grad) {
            if (!prior) return;
            any_prior = true;
            try {
                used.push_back({grad, local_depth_loss(rendered, *prior, weights.patch_size, weights.epsilon,
                                                       weights.depth_form)});
            } catch (const NoSignalError&) {
                ++b.depth_views_skipped;
            }
        };
        try_view(render_train.depth, prior_depth_train, &b.grad_depth);
        for (std::size_t s = 0; s < side_terms.size(); ++s) {
            const SideTerm& t = side_terms[s];
            if (t.prior_depth && !t.rendered_depth) throw ConfigError("side view has a depth prior but no render");
            if (t.rendered_depth) b.grad_side_depth[s] = Image(t.rendered_depth->width, t.rendered_depth->height, 1);
            if (t.rendered_depth) try_view(*t.rendered_depth, t.prior_depth, &b.grad_side_depth[s]);
        }
        if (!any_prior) throw ConfigError("local depth weight is nonzero but no view has a depth prior");
        b.depth_views_used = static_cast<int>(used.size());
        if (!used.empty()) {
            const double scale = 1.0 / static_cast<double>(used.size());
            for (auto& u : used) {
                b.local_depth += scale * u.loss.value;
                add_scaled(*u.grad, u.loss.grad, weights.omega_depth * scale);
            }
        }
    }

    b.total = weighted_total(b, weights);
    return b;
}

} // namespace sparsesplat
