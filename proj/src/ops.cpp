#include "floodseg/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace floodseg::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

using detail::Node;

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.ndim() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
    }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
    std::vector<double> out(a.numel());
    auto in = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
    return make_result(a.shape(), std::move(out), {a}, [deriv](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(p.data[i], self.data[i]);
    });
}

struct ConvGeom {
    std::size_t channels, height, width, kernel, stride, padding, out_h, out_w;
};

// cols is [C*K*K, out_h*out_w].
void im2col(const double* img, const ConvGeom& g, double* cols) {
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * plane;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
                        double v = 0.0;
                        if (iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) &&
                            ix < static_cast<long>(g.width)) {
                            v = img[(c * g.height + iy) * g.width + ix];
                        }
                        row[oy * g.out_w + ox] = v;
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatters-and-adds cols into img.
void col2im(const double* cols, const ConvGeom& g, double* img) {
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                const double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * plane;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
                    if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
                        if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
                        img[(c * g.height + iy) * g.width + ix] += row[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

void check_bias(const Tensor& bias, std::size_t channels, const char* op) {
    if (!bias.defined()) return;
    if (bias.ndim() != 1 || bias.dim(0) != channels) {
        throw ShapeError(std::string(op) + ": bias shape " + shape_str(bias.shape()) + " does not match " +
                         std::to_string(channels) + " output channels");
    }
}

void check_affine(const Tensor& gamma, const Tensor& beta, std::size_t channels, const char* op) {
    for (const Tensor* t : {&gamma, &beta}) {
        if (t->ndim() != 1 || t->dim(0) != channels) {
            throw ShapeError(std::string(op) + ": affine parameter shape " + shape_str(t->shape()) +
                             " does not match " + std::to_string(channels) + " channels");
        }
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            Node& p = parent(self, k);
            if (!p.requires_grad) continue;
            auto& g = p.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            Node& p = parent(self, k);
            if (!p.requires_grad) continue;
            const double sign = k == 0 ? 1.0 : -1.0;
            auto& g = p.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
        }
    });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
    return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor scale(const Tensor& a, const Tensor& s) {
    if (s.numel() != 1) throw ShapeError("scale: factor must be a scalar, got " + shape_str(s.shape()));
    const double f = s.data()[0];
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * f;
    return make_result(a.shape(), std::move(out), {a, s}, [](Node& self) {
        Node& pa = parent(self, 0);
        Node& ps = parent(self, 1);
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ps.data[0];
        }
        if (ps.requires_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * pa.data[i];
            ps.grad_buffer()[0] += acc;
        }
    });
}

Tensor square(const Tensor& a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor log(const Tensor& a) {
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        a,
        [](double x) {
            if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
    return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    return unary(
        a, [slope](double x) { return x > 0 ? x : slope * x; },
        [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    return make_result({}, {acc}, {a}, [](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean of empty tensor");
    return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    return make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor mse(const Tensor& a, const Tensor& b) { return mean(square(sub(a, b))); }

Tensor binary_cross_entropy(const Tensor& prob, std::span<const double> target, std::span<const double> weight,
                            double eps) {
    const std::size_t n = prob.numel();
    if (target.size() != n || weight.size() != n) {
        throw ShapeError("binary_cross_entropy: target/weight length does not match " + shape_str(prob.shape()));
    }
    std::vector<double> t(target.begin(), target.end());
    std::vector<double> w(weight.begin(), weight.end());
    double acc = 0.0;
    auto p = prob.data();
    for (std::size_t i = 0; i < n; ++i) {
        if (w[i] == 0.0) continue;
        const double q = std::clamp(p[i], eps, 1.0 - eps);
        acc -= w[i] * (t[i] * std::log(q) + (1.0 - t[i]) * std::log(1.0 - q));
    }
    return make_result({}, {acc}, {prob}, [t = std::move(t), w = std::move(w), eps](Node& self) {
        Node& pp = parent(self, 0);
        if (!pp.requires_grad) return;
        auto& g = pp.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = pp.data[i];
            if (w[i] == 0.0 || x < eps || x > 1.0 - eps) continue;
            g[i] += self.grad[0] * -w[i] * (t[i] / x - (1.0 - t[i]) / (1.0 - x));
        }
    });
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
    require_rank(input, 4, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t cout = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != cin || weight.dim(3) != k) {
        throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                         shape_str(input.shape()));
    }
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    if (h + 2 * padding < k || w + 2 * padding < k) {
        throw ShapeError("conv2d: padded input " + shape_str(input.shape()) + " smaller than kernel " +
                         std::to_string(k));
    }
    check_bias(bias, cout, "conv2d");
    ConvGeom g{cin, h, w, k, stride, padding, (h + 2 * padding - k) / stride + 1, (w + 2 * padding - k) / stride + 1};
    const std::size_t plane = g.out_h * g.out_w, patch = cin * k * k;

    std::vector<double> out(n * cout * plane);
    std::vector<double> cols(patch * plane);
    ConstMapMat wm(weight.data().data(), cout, patch);
    for (std::size_t b = 0; b < n; ++b) {
        im2col(input.data().data() + b * cin * h * w, g, cols.data());
        MapMat om(out.data() + b * cout * plane, cout, plane);
        om.noalias() = wm * ConstMapMat(cols.data(), patch, plane);
        if (bias.defined()) {
            for (std::size_t c = 0; c < cout; ++c) om.row(c).array() += bias.data()[c];
        }
    }

    std::vector<Tensor> inputs{input, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result({n, cout, g.out_h, g.out_w}, std::move(out), inputs, [g, n, cout](Node& self) {
        Node& px = parent(self, 0);
        Node& pw = parent(self, 1);
        Node* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        const std::size_t plane = g.out_h * g.out_w, patch = g.channels * g.kernel * g.kernel;
        const std::size_t in_sz = g.channels * g.height * g.width;
        std::vector<double> cols(patch * plane);
        ConstMapMat wm(pw.data.data(), cout, patch);
        for (std::size_t b = 0; b < n; ++b) {
            ConstMapMat gm(self.grad.data() + b * cout * plane, cout, plane);
            if (pw.requires_grad) {
                im2col(px.data.data() + b * in_sz, g, cols.data());
                MapMat(pw.grad_buffer().data(), cout, patch).noalias() +=
                    gm * ConstMapMat(cols.data(), patch, plane).transpose();
            }
            if (px.requires_grad) {
                MapMat(cols.data(), patch, plane).noalias() = wm.transpose() * gm;
                col2im(cols.data(), g, px.grad_buffer().data() + b * in_sz);
            }
            if (pb && pb->requires_grad) {
                auto& gb = pb->grad_buffer();
                for (std::size_t c = 0; c < cout; ++c) gb[c] += gm.row(c).sum();
            }
        }
    });
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
                        std::size_t padding) {
    require_rank(input, 4, "conv_transpose2d input");
    require_rank(weight, 4, "conv_transpose2d weight");
    const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t cout = weight.dim(1), k = weight.dim(2);
    if (weight.dim(0) != cin || weight.dim(3) != k) {
        throw ShapeError("conv_transpose2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                         shape_str(input.shape()));
    }
    if (stride == 0) throw ShapeError("conv_transpose2d: stride must be positive");
    if ((h - 1) * stride + k <= 2 * padding || (w - 1) * stride + k <= 2 * padding) {
        throw ShapeError("conv_transpose2d: padding too large for input " + shape_str(input.shape()));
    }
    check_bias(bias, cout, "conv_transpose2d");
    const std::size_t oh = (h - 1) * stride + k - 2 * padding, ow = (w - 1) * stride + k - 2 * padding;
    // Geometry of the conv2d whose input-adjoint this is.
    ConvGeom g{cout, oh, ow, k, stride, padding, h, w};
    const std::size_t plane = h * w, patch = cout * k * k, out_sz = cout * oh * ow;

    std::vector<double> out(n * out_sz, 0.0);
    std::vector<double> cols(patch * plane);
    ConstMapMat wm(weight.data().data(), cin, patch);
    for (std::size_t b = 0; b < n; ++b) {
        ConstMapMat xm(input.data().data() + b * cin * plane, cin, plane);
        MapMat(cols.data(), patch, plane).noalias() = wm.transpose() * xm;
        col2im(cols.data(), g, out.data() + b * out_sz);
        if (bias.defined()) {
            for (std::size_t c = 0; c < cout; ++c) {
                double* o = out.data() + b * out_sz + c * oh * ow;
                for (std::size_t i = 0; i < oh * ow; ++i) o[i] += bias.data()[c];
            }
        }
    }

    std::vector<Tensor> inputs{input, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result({n, cout, oh, ow}, std::move(out), inputs, [g, n, cin](Node& self) {
        Node& px = parent(self, 0);
        Node& pw = parent(self, 1);
        Node* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        const std::size_t plane = g.out_h * g.out_w, patch = g.channels * g.kernel * g.kernel;
        const std::size_t out_sz = g.channels * g.height * g.width;
        std::vector<double> cols(patch * plane);
        ConstMapMat wm(pw.data.data(), cin, patch);
        for (std::size_t b = 0; b < n; ++b) {
            im2col(self.grad.data() + b * out_sz, g, cols.data());
            ConstMapMat cm(cols.data(), patch, plane);
            if (px.requires_grad) {
                MapMat(px.grad_buffer().data() + b * cin * plane, cin, plane).noalias() += wm * cm;
            }
            if (pw.requires_grad) {
                ConstMapMat xm(px.data.data() + b * cin * plane, cin, plane);
                MapMat(pw.grad_buffer().data(), cin, patch).noalias() += xm * cm.transpose();
            }
            if (pb && pb->requires_grad) {
                auto& gb = pb->grad_buffer();
                const std::size_t hw = g.height * g.width;
                for (std::size_t c = 0; c < g.channels; ++c) {
                    const double* gr = self.grad.data() + b * out_sz + c * hw;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < hw; ++i) acc += gr[i];
                    gb[c] += acc;
                }
            }
        }
    });
}

namespace {

// Shared normalization kernel. Group `grp` covers, for each sample in
// [0, samples_per_group), the contiguous span of `span` elements starting at
// offset(grp, s). Returns the normalized values xhat.
template <typename Offset>
Tensor normalize_groups(const Tensor& input, const Tensor& gamma, const Tensor& beta, std::size_t channels,
                        std::size_t groups, std::size_t samples_per_group, std::size_t span, Offset offset,
                        const std::vector<double>& mean, const std::vector<double>& inv_std,
                        bool stats_depend_on_input) {
    auto x = input.data();
    std::vector<double> xhat(input.numel());
    std::vector<double> out(input.numel());
    for (std::size_t grp = 0; grp < groups; ++grp) {
        const std::size_t c = grp % channels;
        for (std::size_t s = 0; s < samples_per_group; ++s) {
            const std::size_t base = offset(grp, s);
            for (std::size_t i = 0; i < span; ++i) {
                const double xh = (x[base + i] - mean[grp]) * inv_std[grp];
                xhat[base + i] = xh;
                out[base + i] = gamma.data()[c] * xh + beta.data()[c];
            }
        }
    }
    return make_result(
        input.shape(), std::move(out), {input, gamma, beta},
        [xhat = std::move(xhat), inv_std, channels, groups, samples_per_group, span, offset,
         stats_depend_on_input](Node& self) {
            Node& px = parent(self, 0);
            Node& pg = parent(self, 1);
            Node& pb = parent(self, 2);
            const double count = static_cast<double>(samples_per_group * span);
            for (std::size_t grp = 0; grp < groups; ++grp) {
                const std::size_t c = grp % channels;
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (std::size_t s = 0; s < samples_per_group; ++s) {
                    const std::size_t base = offset(grp, s);
                    for (std::size_t i = 0; i < span; ++i) {
                        sum_dy += self.grad[base + i];
                        sum_dy_xhat += self.grad[base + i] * xhat[base + i];
                    }
                }
                if (pg.requires_grad) pg.grad_buffer()[c] += sum_dy_xhat;
                if (pb.requires_grad) pb.grad_buffer()[c] += sum_dy;
                if (!px.requires_grad) continue;
                auto& gx = px.grad_buffer();
                const double gmul = pg.data[c] * inv_std[grp];
                for (std::size_t s = 0; s < samples_per_group; ++s) {
                    const std::size_t base = offset(grp, s);
                    for (std::size_t i = 0; i < span; ++i) {
                        const double dy = self.grad[base + i];
                        if (stats_depend_on_input) {
                            gx[base + i] += gmul * (dy - sum_dy / count - xhat[base + i] * sum_dy_xhat / count);
                        } else {
                            gx[base + i] += gmul * dy;
                        }
                    }
                }
            }
        });
}

}  // namespace

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, std::vector<double>& running_mean,
                  std::vector<double>& running_var, bool training, double momentum, double eps) {
    require_rank(input, 4, "batch_norm");
    const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
    check_affine(gamma, beta, c, "batch_norm");
    if (running_mean.size() != c || running_var.size() != c) {
        throw ShapeError("batch_norm: running statistics do not match " + std::to_string(c) + " channels");
    }
    auto offset = [c, hw](std::size_t grp, std::size_t s) { return (s * c + grp) * hw; };
    std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
    auto x = input.data();
    if (training) {
        const double count = static_cast<double>(n * hw);
        for (std::size_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t i = 0; i < hw; ++i) acc += x[offset(ch, s) + i];
            const double mu = acc / count;
            double var = 0.0;
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t i = 0; i < hw; ++i) {
                    const double d = x[offset(ch, s) + i] - mu;
                    var += d * d;
                }
            var /= count;
            mean[ch] = mu;
            inv_std[ch] = 1.0 / std::sqrt(var + eps);
            const double unbiased = count > 1 ? var * count / (count - 1) : var;
            running_mean[ch] = (1 - momentum) * running_mean[ch] + momentum * mu;
            running_var[ch] = (1 - momentum) * running_var[ch] + momentum * unbiased;
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            mean[ch] = running_mean[ch];
            inv_std[ch] = 1.0 / std::sqrt(running_var[ch] + eps);
        }
    }
    return normalize_groups(input, gamma, beta, c, c, n, hw, offset, mean, inv_std, training);
}

Tensor instance_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank(input, 4, "instance_norm");
    const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
    check_affine(gamma, beta, c, "instance_norm");
    auto offset = [hw](std::size_t grp, std::size_t) { return grp * hw; };
    std::vector<double> mean(n * c), inv_std(n * c);
    auto x = input.data();
    for (std::size_t grp = 0; grp < n * c; ++grp) {
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += x[grp * hw + i];
        const double mu = acc / static_cast<double>(hw);
        double var = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
            const double d = x[grp * hw + i] - mu;
            var += d * d;
        }
        var /= static_cast<double>(hw);
        mean[grp] = mu;
        inv_std[grp] = 1.0 / std::sqrt(var + eps);
    }
    return normalize_groups(input, gamma, beta, c, n * c, 1, hw, offset, mean, inv_std, true);
}

Tensor dropout(const Tensor& input, double p, bool training, std::mt19937_64& rng) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout probability must lie in [0, 1)");
    if (!training || p == 0.0) return input;
    std::bernoulli_distribution keep(1.0 - p);
    const double s = 1.0 / (1.0 - p);
    std::vector<double> mask(input.numel());
    for (auto& m : mask) m = keep(rng) ? s : 0.0;
    std::vector<double> out(input.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = input.data()[i] * mask[i];
    return make_result(input.shape(), std::move(out), {input}, [mask = std::move(mask)](Node& self) {
        Node& p0 = parent(self, 0);
        if (!p0.requires_grad) return;
        auto& g = p0.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
    });
}

namespace {

struct Tap {
    std::size_t i0, i1;
    double frac;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t factor) {
    std::vector<Tap> taps(in * factor);
    for (std::size_t o = 0; o < taps.size(); ++o) {
        double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
        if (src < 0) src = 0;
        auto i0 = static_cast<std::size_t>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const std::size_t i1 = std::min(i0 + 1, in - 1);
        taps[o] = {i0, i1, src - static_cast<double>(i0)};
    }
    return taps;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& input, std::size_t factor) {
    require_rank(input, 4, "upsample_bilinear");
    if (factor == 0) throw ShapeError("upsample_bilinear: factor must be positive");
    const std::size_t nc = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t oh = h * factor, ow = w * factor;
    auto ty = bilinear_taps(h, factor);
    auto tx = bilinear_taps(w, factor);
    std::vector<double> out(nc * oh * ow);
    auto x = input.data();
    for (std::size_t p = 0; p < nc; ++p) {
        const double* src = x.data() + p * h * w;
        double* dst = out.data() + p * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            const auto& a = ty[oy];
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const auto& b = tx[ox];
                const double top = (1 - b.frac) * src[a.i0 * w + b.i0] + b.frac * src[a.i0 * w + b.i1];
                const double bot = (1 - b.frac) * src[a.i1 * w + b.i0] + b.frac * src[a.i1 * w + b.i1];
                dst[oy * ow + ox] = (1 - a.frac) * top + a.frac * bot;
            }
        }
    }
    return make_result({input.dim(0), input.dim(1), oh, ow}, std::move(out), {input},
                       [ty = std::move(ty), tx = std::move(tx), nc, h, w, oh, ow](Node& self) {
                           Node& p0 = parent(self, 0);
                           if (!p0.requires_grad) return;
                           auto& g = p0.grad_buffer();
                           for (std::size_t p = 0; p < nc; ++p) {
                               double* gs = g.data() + p * h * w;
                               const double* gd = self.grad.data() + p * oh * ow;
                               for (std::size_t oy = 0; oy < oh; ++oy) {
                                   const auto& a = ty[oy];
                                   for (std::size_t ox = 0; ox < ow; ++ox) {
                                       const auto& b = tx[ox];
                                       const double d = gd[oy * ow + ox];
                                       gs[a.i0 * w + b.i0] += d * (1 - a.frac) * (1 - b.frac);
                                       gs[a.i0 * w + b.i1] += d * (1 - a.frac) * b.frac;
                                       gs[a.i1 * w + b.i0] += d * a.frac * (1 - b.frac);
                                       gs[a.i1 * w + b.i1] += d * a.frac * b.frac;
                                   }
                               }
                           }
                       });
}

Tensor concat_channels(const std::vector<Tensor>& inputs) {
    if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
    const auto& first = inputs.front();
    require_rank(first, 4, "concat_channels");
    const std::size_t n = first.dim(0), h = first.dim(2), w = first.dim(3), hw = h * w;
    std::vector<std::size_t> chans;
    std::size_t total = 0;
    for (const auto& t : inputs) {
        require_rank(t, 4, "concat_channels");
        if (t.dim(0) != n || t.dim(2) != h || t.dim(3) != w) {
            throw ShapeError("concat_channels: " + shape_str(t.shape()) + " incompatible with " +
                             shape_str(first.shape()));
        }
        chans.push_back(t.dim(1));
        total += t.dim(1);
    }
    std::vector<double> out(n * total * hw);
    for (std::size_t b = 0; b < n; ++b) {
        std::size_t c0 = 0;
        for (std::size_t k = 0; k < inputs.size(); ++k) {
            auto src = inputs[k].data().subspan(b * chans[k] * hw, chans[k] * hw);
            std::copy(src.begin(), src.end(), out.begin() + static_cast<long>((b * total + c0) * hw));
            c0 += chans[k];
        }
    }
    return make_result({n, total, h, w}, std::move(out), inputs, [chans, n, total, hw](Node& self) {
        std::size_t c0 = 0;
        for (std::size_t k = 0; k < chans.size(); ++k) {
            Node& p = parent(self, k);
            if (p.requires_grad) {
                auto& g = p.grad_buffer();
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t i = 0; i < chans[k] * hw; ++i)
                        g[b * chans[k] * hw + i] += self.grad[(b * total + c0) * hw + i];
            }
            c0 += chans[k];
        }
    });
}

Tensor crop(const Tensor& input, std::size_t height, std::size_t width) {
    require_rank(input, 4, "crop");
    const std::size_t nc = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
    if (height > h || width > w) throw ShapeError("crop: target larger than " + shape_str(input.shape()));
    if (height == h && width == w) return input;
    std::vector<double> out(nc * height * width);
    for (std::size_t p = 0; p < nc; ++p)
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) out[(p * height + y) * width + x] = input.data()[(p * h + y) * w + x];
    return make_result({input.dim(0), input.dim(1), height, width}, std::move(out), {input},
                       [nc, h, w, height, width](Node& self) {
                           Node& p0 = parent(self, 0);
                           if (!p0.requires_grad) return;
                           auto& g = p0.grad_buffer();
                           for (std::size_t p = 0; p < nc; ++p)
                               for (std::size_t y = 0; y < height; ++y)
                                   for (std::size_t x = 0; x < width; ++x)
                                       g[(p * h + y) * w + x] += self.grad[(p * height + y) * width + x];
                       });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    require_rank(a, 3, "bmm");
    require_rank(b, 3, "bmm");
    const std::size_t nb = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    if (b.dim(0) != nb || b.dim(1) != k) {
        throw ShapeError("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    std::vector<double> out(nb * m * n);
    for (std::size_t i = 0; i < nb; ++i) {
        MapMat(out.data() + i * m * n, m, n).noalias() =
            ConstMapMat(a.data().data() + i * m * k, m, k) * ConstMapMat(b.data().data() + i * k * n, k, n);
    }
    return make_result({nb, m, n}, std::move(out), {a, b}, [nb, m, k, n](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        for (std::size_t i = 0; i < nb; ++i) {
            ConstMapMat g(self.grad.data() + i * m * n, m, n);
            if (pa.requires_grad) {
                MapMat(pa.grad_buffer().data() + i * m * k, m, k).noalias() +=
                    g * ConstMapMat(pb.data.data() + i * k * n, k, n).transpose();
            }
            if (pb.requires_grad) {
                MapMat(pb.grad_buffer().data() + i * k * n, k, n).noalias() +=
                    ConstMapMat(pa.data.data() + i * m * k, m, k).transpose() * g;
            }
        }
    });
}

Tensor transpose12(const Tensor& a) {
    require_rank(a, 3, "transpose12");
    const std::size_t nb = a.dim(0), m = a.dim(1), n = a.dim(2);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < nb; ++i)
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) out[(i * n + c) * m + r] = a.data()[(i * m + r) * n + c];
    return make_result({nb, n, m}, std::move(out), {a}, [nb, m, n](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < nb; ++i)
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < n; ++c) g[(i * m + r) * n + c] += self.grad[(i * n + c) * m + r];
    });
}

Tensor softmax_last(const Tensor& a) {
    if (a.ndim() == 0) throw ShapeError("softmax_last on scalar");
    const std::size_t n = a.shape().back(), rows = a.numel() / n;
    std::vector<double> out(a.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.data().data() + r * n;
        double* y = out.data() + r * n;
        const double mx = *std::max_element(x, x + n);
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i) z += (y[i] = std::exp(x[i] - mx));
        for (std::size_t i = 0; i < n; ++i) y[i] /= z;
    }
    return make_result(a.shape(), std::move(out), {a}, [rows, n](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.data.data() + r * n;
            const double* gy = self.grad.data() + r * n;
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) dot += gy[i] * y[i];
            for (std::size_t i = 0; i < n; ++i) g[r * n + i] += y[i] * (gy[i] - dot);
        }
    });
}

Tensor spectral_normalize(const Tensor& weight, std::span<const double> u, std::span<const double> v) {
    if (weight.ndim() < 2) throw ShapeError("spectral_normalize: weight must have rank >= 2");
    const std::size_t rows = weight.dim(0), cols = weight.numel() / rows;
    if (u.size() != rows || v.size() != cols) {
        throw ShapeError("spectral_normalize: power-iteration vectors do not match weight " +
                         shape_str(weight.shape()));
    }
    ConstMapMat wm(weight.data().data(), rows, cols);
    Eigen::Map<const Eigen::VectorXd> uv(u.data(), rows), vv(v.data(), cols);
    const double sigma = uv.dot(wm * vv);
    if (sigma == 0.0) return weight;
    std::vector<double> out(weight.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = weight.data()[i] / sigma;
    std::vector<double> uc(u.begin(), u.end()), vc(v.begin(), v.end());
    return make_result(weight.shape(), std::move(out), {weight},
                       [sigma, rows, cols, uc = std::move(uc), vc = std::move(vc)](Node& self) {
                           Node& p = parent(self, 0);
                           if (!p.requires_grad) return;
                           double gw = 0.0;
                           for (std::size_t i = 0; i < self.grad.size(); ++i) gw += self.grad[i] * p.data[i];
                           const double coef = gw / (sigma * sigma);
                           auto& g = p.grad_buffer();
                           for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < cols; ++c)
                                   g[r * cols + c] += self.grad[r * cols + c] / sigma - coef * uc[r] * vc[c];
                       });
}

}  // namespace floodseg::ops
