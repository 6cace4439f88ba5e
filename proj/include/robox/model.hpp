#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "robox/common.hpp"
#include "robox/geometry.hpp"
#include "robox/image.hpp"
#include "robox/priors.hpp"
#include "robox/tensor.hpp"

namespace robox {

/// Geometry of the segmentation model. The defaults describe the working
/// 64 px configuration; reduced() is a 16 px variant small enough for
/// finite-difference checks over whole forward passes.
struct ModelConfig {
    std::size_t image_size = 64;
    std::size_t patch = 8;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t enc_blocks = 2;
    std::size_t dec_layers = 2;
    std::size_t n_mask_tokens = 3;
    std::size_t n_points = 5;   // correction points proposed per image
    int refine_iters = 5;       // box refinement steps at inference
    double refine_stop_eps = 0.5;  // stop when the offset L1 drops below this (px)

    static ModelConfig reduced() {
        ModelConfig c;
        c.image_size = 16;
        c.patch = 4;
        c.d_model = 16;
        c.n_heads = 2;
        return c;
    }

    std::size_t grid() const { return image_size / patch; }
    std::size_t tokens() const { return grid() * grid(); }
    std::size_t head_dim() const { return d_model / n_heads; }
    std::size_t fourier_bands() const { return d_model / 4; }

    void validate() const {
        if (image_size % patch != 0) throw ParamError("ModelConfig: patch must divide image_size");
        if (d_model % n_heads != 0) throw ParamError("ModelConfig: heads must divide d_model");
        if (d_model % 4 != 0) throw ParamError("ModelConfig: d_model must be a multiple of 4");
        if (n_mask_tokens < 1) throw ParamError("ModelConfig: need at least one mask token");
        if (n_points < 1) throw ParamError("ModelConfig: need at least one point");
        if (refine_iters < 1) throw ParamError("ModelConfig: refine_iters must be positive");
        // The upscaler doubles resolution twice from the token grid; the
        // bilinear tail can only double further, so sizes must line up.
        std::size_t s = grid() * 4;
        while (s < image_size) s *= 2;
        if (s != image_size) throw ParamError("ModelConfig: image_size unreachable from token grid");
    }

    bool operator==(const ModelConfig& o) const = default;
};

/// Prompted segmentation model: ViT-style encoder over patches, prompt
/// tokens for boxes and points, a two-way transformer decoder with mask and
/// IoU tokens, plus three small heads bolted on for prompt robustness
/// (box offset regression, correction point proposal, structural sketch).
class Model {
public:
    Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(seed);
        build_params(rng);
    }

    const ModelConfig& config() const { return cfg_; }

    // -- parameter store ----------------------------------------------------

    const std::vector<std::pair<std::string, nn::Tensor>>& named_params() const { return params_; }

    nn::Tensor p(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ParamError("Model: unknown parameter " + name);
        return params_[it->second].second;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : params_) n += t.numel();
        return n;
    }

    /// Heads and the conditioning attention added for robustness; everything
    /// else is the base model, frozen in the second training phase.
    static bool is_head_param(const std::string& name) {
        return name.rfind("catt.", 0) == 0 || name.rfind("prm.", 0) == 0 ||
               name.rfind("pem.", 0) == 0 || name.rfind("sie.", 0) == 0;
    }

    std::vector<std::pair<std::string, nn::Tensor>> head_params() const {
        std::vector<std::pair<std::string, nn::Tensor>> out;
        for (const auto& kv : params_)
            if (is_head_param(kv.first)) out.push_back(kv);
        return out;
    }

    std::vector<std::pair<std::string, nn::Tensor>> base_params() const {
        std::vector<std::pair<std::string, nn::Tensor>> out;
        for (const auto& kv : params_)
            if (!is_head_param(kv.first)) out.push_back(kv);
        return out;
    }

    std::size_t head_param_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : params_)
            if (is_head_param(name)) n += t.numel();
        return n;
    }

    void zero_grads() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

    /// Zero the output layers of every robustness component. With these at
    /// zero the conditioning attention contributes nothing, predicted
    /// offsets vanish, proposed points collapse to the grid center, and the
    /// sketch features are identically zero.
    void zero_robustness_outputs() {
        for (const char* name : {"catt.wo", "catt.bo", "prm.w3", "prm.b3", "pem.conv2.w",
                                 "pem.conv2.b", "sie.conv2.w", "sie.conv2.b"}) {
            auto t = p(name);
            std::fill(t.leaf_data().begin(), t.leaf_data().end(), 0.0);
        }
    }

    // -- forward pieces ------------------------------------------------------

    nn::Tensor image_to_tensor(const GrayImage& img) const {
        if (img.height != cfg_.image_size || img.width != cfg_.image_size)
            throw ShapeError("Model: image size mismatch");
        return nn::Tensor::from({1, cfg_.image_size, cfg_.image_size}, img.v);
    }

    /// Patch embedding + learned positions + transformer blocks -> [T, d].
    nn::Tensor encode_image(const nn::Tensor& img) {
        const std::size_t d = cfg_.d_model, T = cfg_.tokens();
        nn::Tensor x = nn::conv2d(img, p("patch.w"), p("patch.b"), cfg_.patch, 0);  // [d,G,G]
        x = nn::transpose(nn::reshape(x, {d, T}));                                  // [T, d]
        x = nn::add(x, p("pos"));
        for (std::size_t b = 0; b < cfg_.enc_blocks; ++b) {
            const std::string pre = "enc" + std::to_string(b) + ".";
            nn::Tensor h = layer_norm_(x, pre + "ln1");
            x = nn::add(x, mha_(h, h, pre + "attn"));
            h = layer_norm_(x, pre + "ln2");
            x = nn::add(x, mlp_(h, pre + "mlp"));
        }
        return x;
    }

    /// Sin/cos positional features of points given as an [n,2] tensor of
    /// (x, y) pixel coordinates; differentiable in the coordinates.
    nn::Tensor fourier_embed(const nn::Tensor& pts) const {
        if (pts.rank() != 2 || pts.dim(1) != 2) throw ShapeError("fourier_embed: need [n,2]");
        const std::size_t B = cfg_.fourier_bands();
        std::vector<double> freqs(B);
        for (std::size_t k = 0; k < B; ++k)
            freqs[k] = 2.0 * M_PI * static_cast<double>(k + 1) / static_cast<double>(cfg_.image_size);
        nn::Tensor F = nn::Tensor::from({1, B}, freqs);
        nn::Tensor xs = nn::slice_cols(pts, 0, 1);  // [n,1]
        nn::Tensor ys = nn::slice_cols(pts, 1, 2);
        nn::Tensor xf = nn::matmul(xs, F);  // [n,B]
        nn::Tensor yf = nn::matmul(ys, F);
        return nn::concat({nn::sin_t(xf), nn::cos_t(xf), nn::sin_t(yf), nn::cos_t(yf)}, 1);  // [n,4B]
    }

    /// Box corners as two prompt tokens (top-left and bottom-right types).
    /// `box` is a [4] tensor (x1,y1,x2,y2).
    nn::Tensor encode_box(const nn::Tensor& box) const {
        if (box.numel() != 4) throw ShapeError("encode_box: need 4 coordinates");
        nn::Tensor corners = nn::reshape(box, {2, 2});  // rows (x1,y1), (x2,y2)
        nn::Tensor feats = fourier_embed(corners);      // [2, d]
        nn::Tensor types = nn::concat({nn::reshape(p("prompt.corner_tl"), {1, cfg_.d_model}),
                                       nn::reshape(p("prompt.corner_br"), {1, cfg_.d_model})},
                                      0);
        return nn::add(feats, types);
    }

    /// Point prompts: positional features plus a learned label embedding.
    nn::Tensor encode_points(const nn::Tensor& pts, const std::vector<int>& labels) const {
        if (pts.rank() != 2 || pts.dim(1) != 2 || pts.dim(0) != labels.size())
            throw ShapeError("encode_points: pts [n,2] and labels must agree");
        nn::Tensor feats = fourier_embed(pts);  // [n, d]
        std::vector<nn::Tensor> rows;
        rows.reserve(labels.size());
        for (int l : labels)
            rows.push_back(nn::reshape(p(l ? "prompt.label_pos" : "prompt.label_neg"),
                                       {1, cfg_.d_model}));
        return nn::add(feats, nn::concat(rows, 0));
    }

    /// Prompt token matrix for a box plus optional points.
    nn::Tensor encode_prompts(const nn::Tensor& box, const nn::Tensor& pts,
                              const std::vector<int>& labels) const {
        nn::Tensor b = encode_box(box);
        if (!pts.defined() || labels.empty()) return b;
        return nn::concat({b, encode_points(pts, labels)}, 0);
    }

    /// Conditioning attention: image tokens attend to prompt tokens and the
    /// result is added residually. Passing `attn_probe` collects the
    /// per-head attention weight matrices of this call.
    nn::Tensor condition_on_prompts(const nn::Tensor& f_img, const nn::Tensor& f_p,
                                    std::vector<nn::Tensor>* attn_probe = nullptr) {
        return nn::add(f_img, mha_(f_img, f_p, "catt", attn_probe));
    }

    struct DecodeOut {
        nn::Tensor mask_logits;  // [n_mask_tokens, I, I]
        nn::Tensor iou_pred;     // [n_mask_tokens], in (0,1)
    };

    /// Two-way transformer decode of an image embedding against prompt
    /// tokens, then mask synthesis through the upscaler and hypernetworks.
    DecodeOut decode(const nn::Tensor& embedding, const nn::Tensor& f_p) {
        const std::size_t d = cfg_.d_model, G = cfg_.grid();
        const std::size_t M = cfg_.n_mask_tokens;
        nn::Tensor t = nn::concat({nn::reshape(p("dec.iou_token"), {1, d}), p("dec.mask_tokens"), f_p}, 0);
        nn::Tensor e = embedding;
        for (std::size_t l = 0; l < cfg_.dec_layers; ++l) {
            const std::string pre = "dec" + std::to_string(l) + ".";
            t = layer_norm_(nn::add(t, mha_(t, t, pre + "self")), pre + "ln1");
            t = layer_norm_(nn::add(t, mha_(t, e, pre + "t2i")), pre + "ln2");
            t = layer_norm_(nn::add(t, mlp_(t, pre + "mlp")), pre + "ln3");
            e = layer_norm_(nn::add(e, mha_(e, t, pre + "i2t")), pre + "ln4");
        }
        t = layer_norm_(nn::add(t, mha_(t, e, "decf.t2i")), "decf.ln");

        // Upscale the image embedding back toward pixel resolution.
        nn::Tensor u = nn::reshape(nn::transpose(e), {d, G, G});
        u = nn::gelu(nn::conv2d(nn::upsample2x_nearest(u), p("up1.w"), p("up1.b"), 1, 1));
        u = nn::gelu(nn::conv2d(nn::upsample2x_nearest(u), p("up2.w"), p("up2.b"), 1, 0));
        const std::size_t du = d / 2, Gu = G * 4;

        // Per-mask-token hypernetwork produces the channel mix for its map.
        nn::Tensor uflat = nn::reshape(u, {du, Gu * Gu});
        std::vector<nn::Tensor> maps;
        for (std::size_t m = 0; m < M; ++m) {
            nn::Tensor tok = nn::slice_rows(t, 1 + m, 2 + m);  // [1, d]
            const std::string pre = "hyper" + std::to_string(m) + ".";
            nn::Tensor w = nn::add_rowvec(nn::matmul(tok, p(pre + "w1")), p(pre + "b1"));
            w = nn::add_rowvec(nn::matmul(nn::gelu(w), p(pre + "w2")), p(pre + "b2"));  // [1, du]
            maps.push_back(nn::matmul(w, uflat));  // [1, Gu*Gu]
        }
        nn::Tensor logits = nn::reshape(nn::concat(maps, 0), {M, Gu, Gu});
        for (std::size_t s = Gu; s < cfg_.image_size; s *= 2) logits = nn::upsample2x_bilinear(logits);

        nn::Tensor iou_tok = nn::slice_rows(t, 0, 1);
        nn::Tensor ih = nn::gelu(nn::add_rowvec(nn::matmul(iou_tok, p("iou.w1")), p("iou.b1")));
        nn::Tensor iou = nn::sigmoid(nn::reshape(
            nn::add_rowvec(nn::matmul(ih, p("iou.w2")), p("iou.b2")), {M}));
        return {logits, iou};
    }

    /// Box offset regression from the conditioned embedding and the box's
    /// own prompt tokens -> [4] offsets (dx1, dy1, dx2, dy2) in pixels.
    nn::Tensor prm_offsets(const nn::Tensor& f_star, const nn::Tensor& box_tokens) {
        const std::size_t d = cfg_.d_model, T = cfg_.tokens();
        nn::Tensor pool = nn::mul_scalar(
            nn::matmul(nn::Tensor::full({1, T}, 1.0), f_star), 1.0 / static_cast<double>(T));
        nn::Tensor x = nn::concat({pool, nn::reshape(box_tokens, {1, 2 * d})}, 1);  // [1, 3d]
        x = nn::gelu(nn::add_rowvec(nn::matmul(x, p("prm.w1")), p("prm.b1")));
        x = nn::gelu(nn::add_rowvec(nn::matmul(x, p("prm.w2")), p("prm.b2")));
        return nn::reshape(nn::add_rowvec(nn::matmul(x, p("prm.w3")), p("prm.b3")), {4});
    }

    /// Correction point proposal from the disagreement between the
    /// refined-prompt embedding and the original one. Each proposed point is
    /// the soft-argmax of its own logit map over the token grid -> [n, 2]
    /// pixel coordinates. With zero final-layer weights every map is flat
    /// and all points sit at the grid center.
    nn::Tensor pem_points(const nn::Tensor& f_refined, const nn::Tensor& f_star) {
        const std::size_t d = cfg_.d_model, T = cfg_.tokens(), G = cfg_.grid();
        nn::Tensor diff = nn::reshape(nn::transpose(nn::sub(f_refined, f_star)), {d, G, G});
        nn::Tensor h = nn::gelu(nn::conv2d(diff, p("pem.conv1.w"), p("pem.conv1.b"), 1, 0));
        nn::Tensor logits = nn::conv2d(h, p("pem.conv2.w"), p("pem.conv2.b"), 1, 0);  // [n,G,G]
        nn::Tensor probs = nn::softmax_lastdim(nn::reshape(logits, {cfg_.n_points, T}));
        return nn::matmul(probs, token_centers());  // [n, 2]
    }

    /// Structural sketch features from the prior stack -> [T, d], added to
    /// the image embedding in the final stage.
    nn::Tensor sie_features(const PriorStack& stack) {
        if (stack.height != cfg_.image_size || stack.width != cfg_.image_size)
            throw ShapeError("sie_features: prior stack size mismatch");
        const std::size_t d = cfg_.d_model, T = cfg_.tokens();
        nn::Tensor s = nn::Tensor::from({3, cfg_.image_size, cfg_.image_size}, stack.data);
        nn::Tensor h = nn::gelu(nn::conv2d(s, p("sie.conv1.w"), p("sie.conv1.b"), cfg_.patch, 0));
        nn::Tensor f = nn::conv2d(h, p("sie.conv2.w"), p("sie.conv2.b"), 1, 0);  // [d,G,G]
        return nn::transpose(nn::reshape(f, {d, T}));
    }

    /// Pixel coordinates of each token's patch center, [T, 2] (x, y).
    nn::Tensor token_centers() const {
        const std::size_t G = cfg_.grid(), P = cfg_.patch;
        std::vector<double> v(cfg_.tokens() * 2);
        for (std::size_t r = 0; r < G; ++r)
            for (std::size_t c = 0; c < G; ++c) {
                v[(r * G + c) * 2 + 0] = static_cast<double>(c * P) + (P - 1) / 2.0;
                v[(r * G + c) * 2 + 1] = static_cast<double>(r * P) + (P - 1) / 2.0;
            }
        return nn::Tensor::from({cfg_.tokens(), 2}, v);
    }

    /// Threshold the chosen logit map at 0 into a mask.
    BinaryMask logits_to_mask(const nn::Tensor& mask_logits, std::size_t index) const {
        const std::size_t I = cfg_.image_size;
        if (mask_logits.rank() != 3 || mask_logits.dim(1) != I || mask_logits.dim(2) != I ||
            index >= mask_logits.dim(0))
            throw ShapeError("logits_to_mask: bad logits shape or index");
        BinaryMask m(I, I);
        const double* v = mask_logits.data().data() + index * I * I;
        for (std::size_t i = 0; i < I * I; ++i) m.bits[i] = v[i] > 0.0 ? 1 : 0;
        return m;
    }

private:
    // Multi-head attention with separate query and key/value token sets.
    nn::Tensor mha_(const nn::Tensor& q_in, const nn::Tensor& kv_in, const std::string& pre,
                    std::vector<nn::Tensor>* attn_probe = nullptr) {
        const std::size_t h = cfg_.n_heads, dk = cfg_.head_dim();
        nn::Tensor Q = nn::add_rowvec(nn::matmul(q_in, p(pre + ".wq")), p(pre + ".bq"));
        nn::Tensor K = nn::add_rowvec(nn::matmul(kv_in, p(pre + ".wk")), p(pre + ".bk"));
        nn::Tensor V = nn::add_rowvec(nn::matmul(kv_in, p(pre + ".wv")), p(pre + ".bv"));
        const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
        std::vector<nn::Tensor> heads;
        heads.reserve(h);
        for (std::size_t i = 0; i < h; ++i) {
            nn::Tensor qh = nn::slice_cols(Q, i * dk, (i + 1) * dk);
            nn::Tensor kh = nn::slice_cols(K, i * dk, (i + 1) * dk);
            nn::Tensor vh = nn::slice_cols(V, i * dk, (i + 1) * dk);
            nn::Tensor a = nn::softmax_lastdim(nn::mul_scalar(nn::matmul(qh, nn::transpose(kh)), scale));
            if (attn_probe) attn_probe->push_back(a);
            heads.push_back(nn::matmul(a, vh));
        }
        return nn::add_rowvec(nn::matmul(nn::concat(heads, 1), p(pre + ".wo")), p(pre + ".bo"));
    }

    nn::Tensor mlp_(const nn::Tensor& x, const std::string& pre) {
        nn::Tensor hdn = nn::gelu(nn::add_rowvec(nn::matmul(x, p(pre + ".w1")), p(pre + ".b1")));
        return nn::add_rowvec(nn::matmul(hdn, p(pre + ".w2")), p(pre + ".b2"));
    }

    nn::Tensor layer_norm_(const nn::Tensor& x, const std::string& pre) {
        return nn::layer_norm(x, p(pre + ".g"), p(pre + ".b"));
    }

    void add_param(const std::string& name, nn::Shape shape, Rng& rng, double scale) {
        std::vector<double> v(nn::shape_numel(shape));
        if (scale > 0.0) {
            Rng sub = rng.child(0x9e3779b97f4a7c15ULL ^ params_.size());
            for (auto& x : v) x = sub.normal(0.0, scale);
        }
        index_.emplace(name, params_.size());
        params_.emplace_back(name, nn::Tensor::from(std::move(shape), std::move(v), true));
    }

    void add_ones(const std::string& name, nn::Shape shape) {
        index_.emplace(name, params_.size());
        params_.emplace_back(
            name, nn::Tensor::from(std::move(shape), std::vector<double>(nn::shape_numel(shape), 1.0),
                                   true));
    }

    void add_attn(const std::string& pre, Rng& rng) {
        const std::size_t d = cfg_.d_model;
        const double s = 1.0 / std::sqrt(static_cast<double>(d));
        for (const char* n : {".wq", ".wk", ".wv", ".wo"}) add_param(pre + n, {d, d}, rng, s);
        for (const char* n : {".bq", ".bk", ".bv", ".bo"}) add_param(pre + n, {d}, rng, 0.0);
    }

    void add_ln(const std::string& pre) {
        add_ones(pre + ".g", {cfg_.d_model});
        add_param_zeros(pre + ".b", {cfg_.d_model});
    }

    void add_param_zeros(const std::string& name, nn::Shape shape) {
        index_.emplace(name, params_.size());
        params_.emplace_back(
            name,
            nn::Tensor::from(std::move(shape), std::vector<double>(nn::shape_numel(shape), 0.0), true));
    }

    void add_mlp(const std::string& pre, std::size_t d, std::size_t hidden, Rng& rng) {
        add_param(pre + ".w1", {d, hidden}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
        add_param_zeros(pre + ".b1", {hidden});
        add_param(pre + ".w2", {hidden, d}, rng, 1.0 / std::sqrt(static_cast<double>(hidden)));
        add_param_zeros(pre + ".b2", {d});
    }

    void build_params(Rng& rng) {
        const std::size_t d = cfg_.d_model, P = cfg_.patch, T = cfg_.tokens();
        const std::size_t M = cfg_.n_mask_tokens, n = cfg_.n_points;

        add_param("patch.w", {d, 1, P, P}, rng, 1.0 / std::sqrt(static_cast<double>(P * P)));
        add_param_zeros("patch.b", {d});
        add_param("pos", {T, d}, rng, 0.1);

        for (std::size_t b = 0; b < cfg_.enc_blocks; ++b) {
            const std::string pre = "enc" + std::to_string(b);
            add_ln(pre + ".ln1");
            add_attn(pre + ".attn", rng);
            add_ln(pre + ".ln2");
            add_mlp(pre + ".mlp", d, 4 * d, rng);
        }

        for (const char* nme : {"prompt.corner_tl", "prompt.corner_br", "prompt.label_pos",
                                "prompt.label_neg"})
            add_param(nme, {d}, rng, 0.1);

        add_param("dec.iou_token", {d}, rng, 0.1);
        add_param("dec.mask_tokens", {M, d}, rng, 0.1);
        for (std::size_t l = 0; l < cfg_.dec_layers; ++l) {
            const std::string pre = "dec" + std::to_string(l);
            add_attn(pre + ".self", rng);
            add_ln(pre + ".ln1");
            add_attn(pre + ".t2i", rng);
            add_ln(pre + ".ln2");
            add_mlp(pre + ".mlp", d, 4 * d, rng);
            add_ln(pre + ".ln3");
            add_attn(pre + ".i2t", rng);
            add_ln(pre + ".ln4");
        }
        add_attn("decf.t2i", rng);
        add_ln("decf.ln");

        add_param("up1.w", {d, d, 3, 3}, rng, 1.0 / std::sqrt(static_cast<double>(9 * d)));
        add_param_zeros("up1.b", {d});
        add_param("up2.w", {d / 2, d, 1, 1}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
        add_param_zeros("up2.b", {d / 2});

        for (std::size_t m = 0; m < M; ++m) {
            const std::string pre = "hyper" + std::to_string(m);
            add_param(pre + ".w1", {d, d}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
            add_param_zeros(pre + ".b1", {d});
            add_param(pre + ".w2", {d, d / 2}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
            add_param_zeros(pre + ".b2", {d / 2});
        }
        add_param("iou.w1", {d, d}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
        add_param_zeros("iou.b1", {d});
        add_param("iou.w2", {d, M}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
        add_param_zeros("iou.b2", {M});

        // Robustness additions.
        add_attn("catt", rng);
        add_param("prm.w1", {3 * d, d}, rng, 1.0 / std::sqrt(static_cast<double>(3 * d)));
        add_param_zeros("prm.b1", {d});
        add_param("prm.w2", {d, d}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
        add_param_zeros("prm.b2", {d});
        add_param("prm.w3", {d, 4}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
        add_param_zeros("prm.b3", {4});
        add_param("pem.conv1.w", {d / 2, d, 1, 1}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
        add_param_zeros("pem.conv1.b", {d / 2});
        add_param("pem.conv2.w", {n, d / 2, 1, 1}, rng, 1.0 / std::sqrt(static_cast<double>(d / 2)));
        add_param_zeros("pem.conv2.b", {n});
        add_param("sie.conv1.w", {16, 3, P, P}, rng, 1.0 / std::sqrt(static_cast<double>(3 * P * P)));
        add_param_zeros("sie.conv1.b", {16});
        add_param("sie.conv2.w", {d, 16, 1, 1}, rng, 0.25);
        add_param_zeros("sie.conv2.b", {d});
    }

    ModelConfig cfg_;
    std::vector<std::pair<std::string, nn::Tensor>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace robox
