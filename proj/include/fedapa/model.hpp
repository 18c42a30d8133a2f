#pragma once

// Feed-forward encoder + linear classifier with explicit forward/backward and
// an SGD-with-momentum optimizer. The encoder's final output is divided by
// max(1, ||z||) so every embedding satisfies ||r|| <= 1.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "vec_math.hpp"

namespace fedapa {

enum class Activation { Tanh, Identity };

struct Layer {
    // row-major weight [out x in], bias [out]
    std::vector<double> w;
    std::vector<double> b;
    int in = 0, out = 0;
    Activation act = Activation::Tanh;
};

struct ArchSpec {
    std::string name;               // tiny | middle | large
    int input_dim = 32;
    int d_feat = 256;
    std::vector<int> hidden;        // filled from the preset name

    static ArchSpec preset(const std::string& name, int input_dim, int d_feat) {
        ArchSpec a;
        a.name = name;
        a.input_dim = input_dim;
        a.d_feat = d_feat;
        if (name == "tiny")
            a.hidden = {32};
        else if (name == "middle")
            a.hidden = {64, 64};
        else if (name == "large")
            a.hidden = {128, 128, 128};
        else
            throw UnknownArch("'" + name + "' (expected tiny|middle|large)");
        return a;
    }
};

struct ModelParams {
    std::vector<Layer> encoder;  // last layer outputs d_feat, identity activation
    Layer classifier;            // d_feat -> C, identity
    int d_feat = 0;
    int n_classes = 0;

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : encoder) n += l.w.size() + l.b.size();
        n += classifier.w.size() + classifier.b.size();
        return n;
    }
};

// gradient (or velocity) buffers shaped like a ModelParams
struct GradShadow {
    std::vector<std::vector<double>> enc_w, enc_b;
    std::vector<double> cls_w, cls_b;

    static GradShadow zeros_like(const ModelParams& m) {
        GradShadow g;
        for (const auto& l : m.encoder) {
            g.enc_w.emplace_back(l.w.size(), 0.0);
            g.enc_b.emplace_back(l.b.size(), 0.0);
        }
        g.cls_w.assign(m.classifier.w.size(), 0.0);
        g.cls_b.assign(m.classifier.b.size(), 0.0);
        return g;
    }

    void add_scaled(const GradShadow& o, double s) {
        for (std::size_t k = 0; k < enc_w.size(); ++k) {
            for (std::size_t j = 0; j < enc_w[k].size(); ++j) enc_w[k][j] += s * o.enc_w[k][j];
            for (std::size_t j = 0; j < enc_b[k].size(); ++j) enc_b[k][j] += s * o.enc_b[k][j];
        }
        for (std::size_t j = 0; j < cls_w.size(); ++j) cls_w[j] += s * o.cls_w[j];
        for (std::size_t j = 0; j < cls_b.size(); ++j) cls_b[j] += s * o.cls_b[j];
    }

    double squared_norm() const {
        double s = 0.0;
        for (const auto& v : enc_w)
            for (double x : v) s += x * x;
        for (const auto& v : enc_b)
            for (double x : v) s += x * x;
        for (double x : cls_w) s += x * x;
        for (double x : cls_b) s += x * x;
        return s;
    }
};

struct OptimizerState {
    GradShadow velocity;
    double lr = 1e-2;
    double momentum = 0.5;
    double weight_decay = 1e-5;

    static OptimizerState for_model(const ModelParams& m, double lr, double momentum,
                                    double weight_decay) {
        if (!(lr > 0.0)) throw InvalidSpec("learning rate must be > 0");
        if (momentum < 0.0 || weight_decay < 0.0)
            throw InvalidSpec("momentum and weight_decay must be >= 0");
        OptimizerState o;
        o.velocity = GradShadow::zeros_like(m);
        o.lr = lr;
        o.momentum = momentum;
        o.weight_decay = weight_decay;
        return o;
    }
};

namespace detail {

inline Layer make_layer(int in, int out, Activation act, Rng& rng) {
    Layer l;
    l.in = in;
    l.out = out;
    l.act = act;
    l.w.resize(static_cast<std::size_t>(in) * out);
    l.b.assign(static_cast<std::size_t>(out), 0.0);
    // Xavier-uniform
    const double lim = std::sqrt(6.0 / (in + out));
    for (auto& x : l.w) x = rng.uniform(-lim, lim);
    return l;
}

}  // namespace detail

inline ModelParams init_model(const ArchSpec& arch, int n_classes, Rng& rng) {
    if (n_classes < 2) throw InvalidSpec("init_model needs >= 2 classes");
    ModelParams m;
    m.d_feat = arch.d_feat;
    m.n_classes = n_classes;
    int prev = arch.input_dim;
    for (int h : arch.hidden) {
        m.encoder.push_back(detail::make_layer(prev, h, Activation::Tanh, rng));
        prev = h;
    }
    m.encoder.push_back(detail::make_layer(prev, arch.d_feat, Activation::Identity, rng));
    m.classifier = detail::make_layer(arch.d_feat, n_classes, Activation::Identity, rng);
    return m;
}

// activations cached for exact backprop
struct ForwardCache {
    std::vector<Vec> activations;  // input + post-activation of each encoder layer
    double z_norm = 0.0;           // pre-clip norm of the last encoder output
    double clip_scale = 1.0;       // max(1, z_norm)
};

inline Vec encoder_forward(const ModelParams& m, const Vec& x, ForwardCache* cache = nullptr) {
    if (m.encoder.empty()) throw ShapeMismatch("model has no encoder layers");
    if (static_cast<int>(x.size()) != m.encoder.front().in)
        throw DimensionMismatch("encoder_forward: input dim " + std::to_string(x.size()) +
                                " != " + std::to_string(m.encoder.front().in));
    if (cache) {
        cache->activations.clear();
        cache->activations.push_back(x);
    }
    Vec h = x;
    for (const auto& l : m.encoder) {
        Vec z(static_cast<std::size_t>(l.out));
        for (int r = 0; r < l.out; ++r) {
            double acc = l.b[static_cast<std::size_t>(r)];
            const double* row = &l.w[static_cast<std::size_t>(r) * l.in];
            for (int c = 0; c < l.in; ++c) acc += row[c] * h[static_cast<std::size_t>(c)];
            z[static_cast<std::size_t>(r)] = (l.act == Activation::Tanh) ? std::tanh(acc) : acc;
        }
        h = std::move(z);
        if (cache) cache->activations.push_back(h);
    }
    const double n = norm2(h);
    const double scale = std::max(1.0, n);
    for (auto& v : h) v /= scale;
    if (cache) {
        cache->z_norm = n;
        cache->clip_scale = scale;
    }
    return h;
}

inline Vec classifier_forward(const ModelParams& m, const Vec& r) {
    const Layer& l = m.classifier;
    if (static_cast<int>(r.size()) != l.in)
        throw DimensionMismatch("classifier_forward: dim " + std::to_string(r.size()) +
                                " != " + std::to_string(l.in));
    Vec logits(static_cast<std::size_t>(l.out));
    for (int c = 0; c < l.out; ++c) {
        double acc = l.b[static_cast<std::size_t>(c)];
        const double* row = &l.w[static_cast<std::size_t>(c) * l.in];
        for (int k = 0; k < l.in; ++k) acc += row[k] * r[static_cast<std::size_t>(k)];
        logits[static_cast<std::size_t>(c)] = acc;
    }
    return logits;
}

// Backprop dLoss/dr (embedding) and dLoss/dlogits through the whole model,
// accumulating parameter gradients into `grads`. `d_logits` may be empty when
// the loss does not touch the classifier.
inline void backprop_sample(const ModelParams& m, const ForwardCache& cache, const Vec& r,
                            const Vec& d_logits, const Vec& d_r_extra, GradShadow& grads) {
    Vec d_r = d_r_extra.empty() ? Vec(r.size(), 0.0) : d_r_extra;
    if (!d_logits.empty()) {
        const Layer& cl = m.classifier;
        if (static_cast<int>(d_logits.size()) != cl.out)
            throw ShapeMismatch("backprop_sample: d_logits size");
        for (int c = 0; c < cl.out; ++c) {
            const double g = d_logits[static_cast<std::size_t>(c)];
            grads.cls_b[static_cast<std::size_t>(c)] += g;
            double* grow = &grads.cls_w[static_cast<std::size_t>(c) * cl.in];
            const double* wrow = &cl.w[static_cast<std::size_t>(c) * cl.in];
            for (int k = 0; k < cl.in; ++k) {
                grow[k] += g * r[static_cast<std::size_t>(k)];
                d_r[static_cast<std::size_t>(k)] += g * wrow[k];
            }
        }
    }
    // through the norm clip: r = z / s, s = max(1, ||z||)
    // s == 1: dz = dr. s > 1: dz = dr/s - r (r . dr)/s
    Vec d = d_r;
    if (cache.clip_scale > 1.0) {
        const double s = cache.clip_scale;
        double rdotd = 0.0;
        for (std::size_t k = 0; k < r.size(); ++k) rdotd += r[k] * d_r[k];
        for (std::size_t k = 0; k < r.size(); ++k)
            d[k] = d_r[k] / s - r[k] * rdotd / s;
    }
    // encoder layers, last to first
    for (int li = static_cast<int>(m.encoder.size()) - 1; li >= 0; --li) {
        const Layer& l = m.encoder[static_cast<std::size_t>(li)];
        const Vec& input = cache.activations[static_cast<std::size_t>(li)];
        const Vec& output = cache.activations[static_cast<std::size_t>(li) + 1];
        Vec dz = d;
        if (l.act == Activation::Tanh)
            for (int r_ = 0; r_ < l.out; ++r_)
                dz[static_cast<std::size_t>(r_)] *=
                    1.0 - output[static_cast<std::size_t>(r_)] * output[static_cast<std::size_t>(r_)];
        Vec d_in(static_cast<std::size_t>(l.in), 0.0);
        auto& gw = grads.enc_w[static_cast<std::size_t>(li)];
        auto& gb = grads.enc_b[static_cast<std::size_t>(li)];
        for (int r_ = 0; r_ < l.out; ++r_) {
            const double g = dz[static_cast<std::size_t>(r_)];
            gb[static_cast<std::size_t>(r_)] += g;
            double* grow = &gw[static_cast<std::size_t>(r_) * l.in];
            const double* wrow = &l.w[static_cast<std::size_t>(r_) * l.in];
            for (int c = 0; c < l.in; ++c) {
                grow[c] += g * input[static_cast<std::size_t>(c)];
                d_in[static_cast<std::size_t>(c)] += g * wrow[c];
            }
        }
        d = std::move(d_in);
    }
}

// v <- momentum*v + (grad + weight_decay*w); w <- w - lr*v
inline void sgd_step(ModelParams& m, const GradShadow& grads, OptimizerState& opt) {
    auto apply = [&](std::vector<double>& w, const std::vector<double>& g,
                     std::vector<double>& v) {
        if (w.size() != g.size() || w.size() != v.size())
            throw ShapeMismatch("sgd_step: buffer sizes disagree");
        for (std::size_t k = 0; k < w.size(); ++k) {
            v[k] = opt.momentum * v[k] + (g[k] + opt.weight_decay * w[k]);
            w[k] -= opt.lr * v[k];
        }
    };
    for (std::size_t li = 0; li < m.encoder.size(); ++li) {
        apply(m.encoder[li].w, grads.enc_w[li], opt.velocity.enc_w[li]);
        apply(m.encoder[li].b, grads.enc_b[li], opt.velocity.enc_b[li]);
    }
    apply(m.classifier.w, grads.cls_w, opt.velocity.cls_w);
    apply(m.classifier.b, grads.cls_b, opt.velocity.cls_b);
}

// ---- optional checkpoint: versioned little-endian binary ----

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("truncated checkpoint");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f64(std::ostream& os, double v) {
    std::uint64_t u;
    static_assert(sizeof(u) == sizeof(v));
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw IoError("truncated checkpoint");
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

}  // namespace detail

inline void save_checkpoint(const ModelParams& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    detail::put_u32(os, 0x46414d31u);  // magic "FAM1"
    detail::put_u32(os, static_cast<std::uint32_t>(m.encoder.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(m.d_feat));
    detail::put_u32(os, static_cast<std::uint32_t>(m.n_classes));
    auto put_layer = [&](const Layer& l) {
        detail::put_u32(os, static_cast<std::uint32_t>(l.in));
        detail::put_u32(os, static_cast<std::uint32_t>(l.out));
        detail::put_u32(os, l.act == Activation::Tanh ? 1u : 0u);
        for (double v : l.w) detail::put_f64(os, v);
        for (double v : l.b) detail::put_f64(os, v);
    };
    for (const auto& l : m.encoder) put_layer(l);
    put_layer(m.classifier);
    if (!os) throw IoError("write failed for " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    if (detail::get_u32(is) != 0x46414d31u) throw ParseError(path + ": bad magic");
    ModelParams m;
    const std::uint32_t n_layers = detail::get_u32(is);
    m.d_feat = static_cast<int>(detail::get_u32(is));
    m.n_classes = static_cast<int>(detail::get_u32(is));
    auto get_layer = [&]() {
        Layer l;
        l.in = static_cast<int>(detail::get_u32(is));
        l.out = static_cast<int>(detail::get_u32(is));
        l.act = detail::get_u32(is) == 1u ? Activation::Tanh : Activation::Identity;
        l.w.resize(static_cast<std::size_t>(l.in) * l.out);
        l.b.resize(static_cast<std::size_t>(l.out));
        for (auto& v : l.w) v = detail::get_f64(is);
        for (auto& v : l.b) v = detail::get_f64(is);
        return l;
    };
    for (std::uint32_t k = 0; k < n_layers; ++k) m.encoder.push_back(get_layer());
    m.classifier = get_layer();
    return m;
}

}  // namespace fedapa
