#include "mmret/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mmret::ops {

namespace {

Tensor make_output(Tape* tape, Shape shape, bool inputs_need_grad) {
    bool rg = tape != nullptr && inputs_need_grad;
    Tensor out = Tensor::zeros(std::move(shape), rg);
    return out;
}

void check_matrix(const Tensor& t, const char* who) {
    if (t.shape.size() != 2)
        throw DimensionError(std::string(who) + " expects a matrix, got " + shape_str(t.shape));
}

void check_vector(const Tensor& t, const char* who) {
    if (t.shape.size() != 1)
        throw DimensionError(std::string(who) + " expects a vector, got " + shape_str(t.shape));
}

// dst += src
void accumulate(std::vector<double>& dst, const std::vector<double>& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
    check_matrix(a, "matmul");
    check_matrix(b, "matmul");
    if (a.cols() != b.rows())
        throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape) + " * " + shape_str(b.shape));
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = make_output(tape, {m, n}, a.requires_grad || b.requires_grad);
    const double* pa = a.ptr();
    const double* pb = b.ptr();
    double* po = out.ptr();
    for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
            const double av = pa[i * k + kk];
            if (av == 0.0) continue;
            const double* brow = pb + kk * n;
            double* orow = po + i * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    if (out.requires_grad) {
        out.node = tape->record([a, b, out, m, k, n] {
            const std::vector<double>& go = *out.grad;
            if (a.grad) {
                std::vector<double>& ga = *a.grad;
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        const double g = go[i * n + j];
                        if (g == 0.0) continue;
                        const double* brow = b.ptr() + 0;
                        for (int kk = 0; kk < k; ++kk) ga[i * k + kk] += g * brow[kk * n + j];
                    }
            }
            if (b.grad) {
                std::vector<double>& gb = *b.grad;
                for (int kk = 0; kk < k; ++kk)
                    for (int i = 0; i < m; ++i) {
                        const double av = a.ptr()[i * k + kk];
                        if (av == 0.0) continue;
                        const double* grow = go.data() + i * n;
                        for (int j = 0; j < n; ++j) gb[kk * n + j] += av * grow[j];
                    }
            }
        });
    }
    return out;
}

Tensor embedding_lookup(Tape* tape, const Tensor& table, const std::vector<int>& ids) {
    check_matrix(table, "embedding_lookup");
    const int v = table.rows(), d = table.cols();
    for (int id : ids)
        if (id < 0 || id >= v)
            throw IndexError("token id " + std::to_string(id) + " outside vocabulary [0, " + std::to_string(v) + ")");
    const int len = static_cast<int>(ids.size());
    if (len == 0) throw DegenerateInputError("embedding_lookup on empty id sequence");
    Tensor out = make_output(tape, {len, d}, table.requires_grad);
    for (int i = 0; i < len; ++i)
        std::copy_n(table.ptr() + static_cast<size_t>(ids[i]) * d, d, out.ptr() + static_cast<size_t>(i) * d);
    if (out.requires_grad) {
        out.node = tape->record([table, out, ids, d] {
            std::vector<double>& gt = *table.grad;
            const std::vector<double>& go = *out.grad;
            for (size_t i = 0; i < ids.size(); ++i) {
                double* dst = gt.data() + static_cast<size_t>(ids[i]) * d;
                const double* src = go.data() + i * d;
                for (int j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

Tensor mean_pool_masked(Tape* tape, const Tensor& x, const std::vector<int>& mask) {
    check_matrix(x, "mean_pool_masked");
    const int len = x.rows(), d = x.cols();
    if (static_cast<int>(mask.size()) != len)
        throw DimensionError("mask length " + std::to_string(mask.size()) + " vs " + std::to_string(len) + " rows");
    int count = 0;
    for (int m : mask) count += (m != 0);
    if (count == 0) throw DegenerateInputError("mean_pool_masked with all-zero mask");
    Tensor out = make_output(tape, {d}, x.requires_grad);
    for (int i = 0; i < len; ++i) {
        if (!mask[i]) continue;
        const double* row = x.ptr() + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) out[j] += row[j];
    }
    const double inv = 1.0 / count;
    for (int j = 0; j < d; ++j) out[j] *= inv;
    if (out.requires_grad) {
        out.node = tape->record([x, out, mask, d, inv] {
            std::vector<double>& gx = *x.grad;
            const std::vector<double>& go = *out.grad;
            for (size_t i = 0; i < mask.size(); ++i) {
                if (!mask[i]) continue;
                double* dst = gx.data() + i * d;
                for (int j = 0; j < d; ++j) dst[j] += go[j] * inv;
            }
        });
    }
    return out;
}

Tensor l2_normalize(Tape* tape, const Tensor& x) {
    check_vector(x, "l2_normalize");
    const size_t d = x.numel();
    double sq = 0.0;
    for (size_t i = 0; i < d; ++i) sq += x[i] * x[i];
    if (!std::isfinite(sq)) throw NumericError("non-finite values reached l2_normalize");
    const double norm = std::sqrt(sq);
    if (!(norm > 1e-12)) throw DegenerateInputError("l2_normalize on near-zero vector (norm " + std::to_string(norm) + ")");
    Tensor out = make_output(tape, x.shape, x.requires_grad);
    const double inv = 1.0 / norm;
    for (size_t i = 0; i < d; ++i) out[i] = x[i] * inv;
    if (out.requires_grad) {
        out.node = tape->record([x, out, d, inv] {
            std::vector<double>& gx = *x.grad;
            const std::vector<double>& go = *out.grad;
            double dot = 0.0;
            for (size_t i = 0; i < d; ++i) dot += out[i] * go[i];
            for (size_t i = 0; i < d; ++i) gx[i] += (go[i] - out[i] * dot) * inv;
        });
    }
    return out;
}

Tensor cosine_sim_matrix(Tape* tape, const Tensor& c, const Tensor& r) {
    check_matrix(c, "cosine_sim_matrix");
    check_matrix(r, "cosine_sim_matrix");
    if (c.cols() != r.cols())
        throw DimensionError("embedding dims disagree: " + shape_str(c.shape) + " vs " + shape_str(r.shape));
    const int bc = c.rows(), br = r.rows(), d = c.cols();
    Tensor out = make_output(tape, {bc, br}, c.requires_grad || r.requires_grad);
    for (int i = 0; i < bc; ++i) {
        const double* ci = c.ptr() + static_cast<size_t>(i) * d;
        for (int j = 0; j < br; ++j) {
            const double* rj = r.ptr() + static_cast<size_t>(j) * d;
            double s = 0.0;
            for (int k = 0; k < d; ++k) s += ci[k] * rj[k];
            out[static_cast<size_t>(i) * br + j] = s;
        }
    }
    if (out.requires_grad) {
        out.node = tape->record([c, r, out, bc, br, d] {
            const std::vector<double>& go = *out.grad;
            if (c.grad) {
                std::vector<double>& gc = *c.grad;
                for (int i = 0; i < bc; ++i)
                    for (int j = 0; j < br; ++j) {
                        const double g = go[static_cast<size_t>(i) * br + j];
                        if (g == 0.0) continue;
                        const double* rj = r.ptr() + static_cast<size_t>(j) * d;
                        double* dst = gc.data() + static_cast<size_t>(i) * d;
                        for (int k = 0; k < d; ++k) dst[k] += g * rj[k];
                    }
            }
            if (r.grad) {
                std::vector<double>& gr = *r.grad;
                for (int i = 0; i < bc; ++i)
                    for (int j = 0; j < br; ++j) {
                        const double g = go[static_cast<size_t>(i) * br + j];
                        if (g == 0.0) continue;
                        const double* ci = c.ptr() + static_cast<size_t>(i) * d;
                        double* dst = gr.data() + static_cast<size_t>(j) * d;
                        for (int k = 0; k < d; ++k) dst[k] += g * ci[k];
                    }
            }
        });
    }
    return out;
}

Tensor softmax_cross_entropy_rows(Tape* tape, const Tensor& logits, const std::vector<int>& targets) {
    check_matrix(logits, "softmax_cross_entropy_rows");
    const int b = logits.rows(), n = logits.cols();
    if (static_cast<int>(targets.size()) != b)
        throw DimensionError("target count " + std::to_string(targets.size()) + " vs " + std::to_string(b) + " rows");
    for (int t : targets)
        if (t < 0 || t >= n)
            throw IndexError("target " + std::to_string(t) + " outside [0, " + std::to_string(n) + ")");
    // softmax probabilities are kept for the backward rule
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(b) * n);
    double total = 0.0;
    for (int i = 0; i < b; ++i) {
        const double* row = logits.ptr() + static_cast<size_t>(i) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < n; ++j) denom += std::exp(row[j] - mx);
        const double log_denom = std::log(denom);
        total += log_denom - (row[targets[i]] - mx);
        double* prow = probs->data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) prow[j] = std::exp(row[j] - mx) / denom;
    }
    Tensor out = make_output(tape, {1}, logits.requires_grad);
    out[0] = total / b;
    if (out.requires_grad) {
        out.node = tape->record([logits, out, probs, targets, b, n] {
            const double g = (*out.grad)[0] / b;
            std::vector<double>& gl = *logits.grad;
            for (int i = 0; i < b; ++i) {
                const double* prow = probs->data() + static_cast<size_t>(i) * n;
                double* dst = gl.data() + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) dst[j] += g * prow[j];
                dst[targets[i]] -= g;
            }
        });
    }
    return out;
}

Tensor bce_with_logits(Tape* tape, const Tensor& logits, const std::vector<int>& labels) {
    const size_t n = logits.numel();
    if (labels.size() != n)
        throw DimensionError("label count " + std::to_string(labels.size()) + " vs " + std::to_string(n) + " logits");
    for (int y : labels)
        if (y != 0 && y != 1) throw ConfigError("bce label must be 0 or 1, got " + std::to_string(y));
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double z = logits[i];
        total += std::max(z, 0.0) - z * labels[i] + std::log1p(std::exp(-std::abs(z)));
    }
    Tensor out = make_output(tape, {1}, logits.requires_grad);
    out[0] = total / static_cast<double>(n);
    if (out.requires_grad) {
        out.node = tape->record([logits, out, labels, n] {
            const double g = (*out.grad)[0] / static_cast<double>(n);
            std::vector<double>& gl = *logits.grad;
            for (size_t i = 0; i < n; ++i) {
                const double sig = 1.0 / (1.0 + std::exp(-logits[i]));
                gl[i] += g * (sig - labels[i]);
            }
        });
    }
    return out;
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape)
        throw DimensionError("add shapes disagree: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    Tensor out = make_output(tape, a.shape, a.requires_grad || b.requires_grad);
    for (size_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[i];
    if (out.requires_grad) {
        out.node = tape->record([a, b, out] {
            if (a.grad) accumulate(*a.grad, *out.grad);
            if (b.grad) accumulate(*b.grad, *out.grad);
        });
    }
    return out;
}

Tensor add_bias(Tape* tape, const Tensor& x, const Tensor& bias) {
    check_matrix(x, "add_bias");
    check_vector(bias, "add_bias");
    const int m = x.rows(), n = x.cols();
    if (static_cast<int>(bias.numel()) != n)
        throw DimensionError("bias " + shape_str(bias.shape) + " vs matrix " + shape_str(x.shape));
    Tensor out = make_output(tape, x.shape, x.requires_grad || bias.requires_grad);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<size_t>(i) * n + j] = x[static_cast<size_t>(i) * n + j] + bias[j];
    if (out.requires_grad) {
        out.node = tape->record([x, bias, out, m, n] {
            const std::vector<double>& go = *out.grad;
            if (x.grad) accumulate(*x.grad, go);
            if (bias.grad) {
                std::vector<double>& gb = *bias.grad;
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) gb[j] += go[static_cast<size_t>(i) * n + j];
            }
        });
    }
    return out;
}

Tensor scale(Tape* tape, const Tensor& x, double s) {
    Tensor out = make_output(tape, x.shape, x.requires_grad);
    for (size_t i = 0; i < out.numel(); ++i) out[i] = x[i] * s;
    if (out.requires_grad) {
        out.node = tape->record([x, out, s] {
            std::vector<double>& gx = *x.grad;
            const std::vector<double>& go = *out.grad;
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * s;
        });
    }
    return out;
}

Tensor div_scalar(Tape* tape, const Tensor& x, double divisor) {
    if (!(divisor > 0.0))
        throw DegenerateInputError("division by non-positive scalar " + std::to_string(divisor));
    return scale(tape, x, 1.0 / divisor);
}

Tensor tanh_act(Tape* tape, const Tensor& x) {
    Tensor out = make_output(tape, x.shape, x.requires_grad);
    for (size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(x[i]);
    if (out.requires_grad) {
        out.node = tape->record([x, out] {
            std::vector<double>& gx = *x.grad;
            const std::vector<double>& go = *out.grad;
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * (1.0 - out[i] * out[i]);
        });
    }
    return out;
}

Tensor concat_vec(Tape* tape, const Tensor& a, const Tensor& b) {
    check_vector(a, "concat_vec");
    check_vector(b, "concat_vec");
    const size_t na = a.numel(), nb = b.numel();
    Tensor out = make_output(tape, {static_cast<int>(na + nb)}, a.requires_grad || b.requires_grad);
    std::copy_n(a.ptr(), na, out.ptr());
    std::copy_n(b.ptr(), nb, out.ptr() + na);
    if (out.requires_grad) {
        out.node = tape->record([a, b, out, na, nb] {
            const std::vector<double>& go = *out.grad;
            if (a.grad)
                for (size_t i = 0; i < na; ++i) (*a.grad)[i] += go[i];
            if (b.grad)
                for (size_t i = 0; i < nb; ++i) (*b.grad)[i] += go[na + i];
        });
    }
    return out;
}

Tensor stack_rows(Tape* tape, std::span<const Tensor> rows) {
    if (rows.empty()) throw DegenerateInputError("stack_rows on empty list");
    const size_t d = rows[0].numel();
    bool rg = false;
    for (const Tensor& r : rows) {
        if (r.shape.size() != 1 || r.numel() != d)
            throw DimensionError("stack_rows expects equal-length vectors, got " + shape_str(r.shape));
        rg = rg || r.requires_grad;
    }
    const int n = static_cast<int>(rows.size());
    Tensor out = make_output(tape, {n, static_cast<int>(d)}, rg);
    for (int i = 0; i < n; ++i) std::copy_n(rows[i].ptr(), d, out.ptr() + i * d);
    if (out.requires_grad) {
        std::vector<Tensor> held(rows.begin(), rows.end());
        out.node = tape->record([held = std::move(held), out, d] {
            const std::vector<double>& go = *out.grad;
            for (size_t i = 0; i < held.size(); ++i) {
                if (!held[i].grad) continue;
                std::vector<double>& g = *held[i].grad;
                const double* src = go.data() + i * d;
                for (size_t j = 0; j < d; ++j) g[j] += src[j];
            }
        });
    }
    return out;
}

Tensor transpose(Tape* tape, const Tensor& x) {
    check_matrix(x, "transpose");
    const int m = x.rows(), n = x.cols();
    Tensor out = make_output(tape, {n, m}, x.requires_grad);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<size_t>(j) * m + i] = x[static_cast<size_t>(i) * n + j];
    if (out.requires_grad) {
        out.node = tape->record([x, out, m, n] {
            std::vector<double>& gx = *x.grad;
            const std::vector<double>& go = *out.grad;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    gx[static_cast<size_t>(i) * n + j] += go[static_cast<size_t>(j) * m + i];
        });
    }
    return out;
}

Tensor dropout(Tape* tape, const Tensor& x, double rate, bool train_mode, std::mt19937_64* rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
    if (!train_mode || rate == 0.0) return x;  // identity, same handle
    if (rng == nullptr) throw ConfigError("train-mode dropout needs an rng");
    const double keep = 1.0 - rate;
    const double inv_keep = 1.0 / keep;
    auto mask = std::make_shared<std::vector<double>>(x.numel());
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (size_t i = 0; i < x.numel(); ++i) (*mask)[i] = uni(*rng) < keep ? inv_keep : 0.0;
    Tensor out = make_output(tape, x.shape, x.requires_grad);
    for (size_t i = 0; i < out.numel(); ++i) out[i] = x[i] * (*mask)[i];
    if (out.requires_grad) {
        out.node = tape->record([x, out, mask] {
            std::vector<double>& gx = *x.grad;
            const std::vector<double>& go = *out.grad;
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * (*mask)[i];
        });
    }
    return out;
}

}  // namespace mmret::ops
