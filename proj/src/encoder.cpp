#include "dqa/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace dqa {

void Encoder::define_params(nn::ParamStore& store, const EncoderConfig& cfg) {
    const int h = cfg.hidden;
    store.define("emb.tok", cfg.vocab_size, h);
    store.define("emb.pos", cfg.max_seq_len, h);
    store.define("emb.seg", 4, h);
    for (const char* axis : {"x0", "y0", "x1", "y1", "w", "h"})
        store.define(std::string("emb.layout.") + axis, cfg.layout_buckets, h);
    store.define("emb.vis.w", 4, h);
    store.define("emb.vis.b", 1, h);
    for (int i = 0; i < cfg.layers; ++i) {
        std::string p = "enc" + std::to_string(i);
        store.define(p + ".ln1.g", 1, h);
        store.define(p + ".ln1.b", 1, h);
        store.define(p + ".attn.wq", h, h);
        store.define(p + ".attn.bq", 1, h);
        store.define(p + ".attn.wk", h, h);
        store.define(p + ".attn.bk", 1, h);
        store.define(p + ".attn.wv", h, h);
        store.define(p + ".attn.bv", 1, h);
        store.define(p + ".attn.wo", h, h);
        store.define(p + ".attn.bo", 1, h);
        store.define(p + ".ln2.g", 1, h);
        store.define(p + ".ln2.b", 1, h);
        store.define(p + ".ffn.w1", h, cfg.ffn_dim);
        store.define(p + ".ffn.b1", 1, cfg.ffn_dim);
        store.define(p + ".ffn.w2", cfg.ffn_dim, h);
        store.define(p + ".ffn.b2", 1, h);
    }
    store.define("enc.final.g", 1, h);
    store.define("enc.final.b", 1, h);
}

namespace {

// coordinates live on the 0..1000 grid; scale into the configured bucket count
int clamp_bucket(int v, int buckets) {
    int clamped = std::clamp(v, 0, 1000);
    return static_cast<int>(static_cast<int64_t>(clamped) * buckets / 1001);
}

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

void init_params(nn::ParamStore& store, uint64_t seed) {
    for (auto& [name, p] : store.all()) {
        size_t dot = name.rfind('.');
        std::string last = dot == std::string::npos ? name : name.substr(dot + 1);
        if (last == "g") {
            std::fill(p.value.d.begin(), p.value.d.end(), 1.0);
        } else if (!last.empty() && last[0] == 'b') {
            std::fill(p.value.d.begin(), p.value.d.end(), 0.0);
        } else {
            std::mt19937_64 rng(seed ^ fnv1a(name));
            std::normal_distribution<double> dist(0.0, 0.02);
            for (double& v : p.value.d) v = dist(rng);
        }
        std::fill(p.grad.d.begin(), p.grad.d.end(), 0.0);
    }
}

EncodedVars Encoder::encode(nn::Tape& t, const InputSequence& seq,
                            AttentionCapture* capture,
                            const std::vector<int>* position_override) const {
    const int L = seq.length();
    const int h = cfg_.hidden;
    if (L > cfg_.max_seq_len)
        throw sequence_too_long("sequence length " + std::to_string(L) +
                                " exceeds max " + std::to_string(cfg_.max_seq_len));
    for (const Token& tok : seq.tokens)
        if (tok.symbol < 0 || tok.symbol >= cfg_.vocab_size)
            throw vocabulary_overflow("token id " + std::to_string(tok.symbol) +
                                      " outside vocabulary of size " +
                                      std::to_string(cfg_.vocab_size));

    const int vis_begin = seq.visual_range.begin;
    const int vis_count = seq.visual_range.size();

    // token embeddings: word ids below the visual block, projected patch
    // features for the visual block
    std::vector<int> ids;
    ids.reserve(vis_begin);
    for (int i = 0; i < vis_begin; ++i) ids.push_back(seq.tokens[i].symbol);
    nn::Var tok_emb = t.gather_rows(t.param(store_.get("emb.tok")), ids);
    if (vis_count > 0) {
        nn::Mat feats(vis_count, 4);
        for (int i = 0; i < vis_count; ++i) {
            const PatchFeature& f = seq.patches[i];
            feats.at(i, 0) = f.mean_r;
            feats.at(i, 1) = f.mean_g;
            feats.at(i, 2) = f.mean_b;
            feats.at(i, 3) = f.darkness;
        }
        nn::Var vis = t.add_rowvec(
            t.matmul(t.input(std::move(feats)), t.param(store_.get("emb.vis.w"))),
            t.param(store_.get("emb.vis.b")));
        tok_emb = t.concat_rows(tok_emb, vis);
    }

    std::vector<int> pos(L);
    for (int i = 0; i < L; ++i) pos[i] = i;
    if (position_override) pos = *position_override;
    nn::Var x = t.add(tok_emb, t.gather_rows(t.param(store_.get("emb.pos")), pos));

    std::vector<int> segs(L);
    for (int i = 0; i < L; ++i) segs[i] = static_cast<int>(seq.tokens[i].segment);
    x = t.add(x, t.gather_rows(t.param(store_.get("emb.seg")), segs));

    const int B = cfg_.layout_buckets;
    std::vector<int> bx0(L), by0(L), bx1(L), by1(L), bw(L), bh(L);
    for (int i = 0; i < L; ++i) {
        const BoundingBox& b = seq.tokens[i].bbox;
        bx0[i] = clamp_bucket(b.x0, B);
        by0[i] = clamp_bucket(b.y0, B);
        bx1[i] = clamp_bucket(b.x1, B);
        by1[i] = clamp_bucket(b.y1, B);
        bw[i] = clamp_bucket(b.width(), B);
        bh[i] = clamp_bucket(b.height(), B);
    }
    x = t.add(x, t.gather_rows(t.param(store_.get("emb.layout.x0")), bx0));
    x = t.add(x, t.gather_rows(t.param(store_.get("emb.layout.y0")), by0));
    x = t.add(x, t.gather_rows(t.param(store_.get("emb.layout.x1")), bx1));
    x = t.add(x, t.gather_rows(t.param(store_.get("emb.layout.y1")), by1));
    x = t.add(x, t.gather_rows(t.param(store_.get("emb.layout.w")), bw));
    x = t.add(x, t.gather_rows(t.param(store_.get("emb.layout.h")), bh));

    const int n_heads = cfg_.heads;
    const int dh = h / n_heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int layer = 0; layer < cfg_.layers; ++layer) {
        std::string p = "enc" + std::to_string(layer);
        nn::Var xn = t.layer_norm_rows(x, t.param(store_.get(p + ".ln1.g")),
                                       t.param(store_.get(p + ".ln1.b")));
        nn::Var q = t.add_rowvec(t.matmul(xn, t.param(store_.get(p + ".attn.wq"))),
                                 t.param(store_.get(p + ".attn.bq")));
        nn::Var k = t.add_rowvec(t.matmul(xn, t.param(store_.get(p + ".attn.wk"))),
                                 t.param(store_.get(p + ".attn.bk")));
        nn::Var v = t.add_rowvec(t.matmul(xn, t.param(store_.get(p + ".attn.wv"))),
                                 t.param(store_.get(p + ".attn.bv")));
        nn::Var ctx;
        for (int hd = 0; hd < n_heads; ++hd) {
            nn::Var qh = t.slice_cols(q, hd * dh, (hd + 1) * dh);
            nn::Var kh = t.slice_cols(k, hd * dh, (hd + 1) * dh);
            nn::Var vh = t.slice_cols(v, hd * dh, (hd + 1) * dh);
            nn::Var scores = t.scale(t.matmul_nt(qh, kh), inv_sqrt_dh);
            nn::Var probs = t.softmax_rows(scores);
            if (capture) capture->probs.push_back(t.val(probs));
            nn::Var ch = t.matmul(probs, vh);
            ctx = (hd == 0) ? ch : t.concat_cols(ctx, ch);
        }
        nn::Var attn_out =
            t.add_rowvec(t.matmul(ctx, t.param(store_.get(p + ".attn.wo"))),
                         t.param(store_.get(p + ".attn.bo")));
        x = t.add(x, attn_out);

        nn::Var xn2 = t.layer_norm_rows(x, t.param(store_.get(p + ".ln2.g")),
                                        t.param(store_.get(p + ".ln2.b")));
        nn::Var f1 = t.gelu(t.add_rowvec(t.matmul(xn2, t.param(store_.get(p + ".ffn.w1"))),
                                         t.param(store_.get(p + ".ffn.b1"))));
        nn::Var f2 = t.add_rowvec(t.matmul(f1, t.param(store_.get(p + ".ffn.w2"))),
                                  t.param(store_.get(p + ".ffn.b2")));
        x = t.add(x, f2);
    }
    x = t.layer_norm_rows(x, t.param(store_.get("enc.final.g")),
                          t.param(store_.get("enc.final.b")));

    EncodedVars out;
    out.X = x;
    out.cls = t.slice_rows(x, seq.cls_index, seq.cls_index + 1);
    out.question_range = seq.question_range;
    out.table_range = seq.table_range;
    out.text_range = seq.text_range;
    out.visual_range = seq.visual_range;
    out.doc_rows = seq.document_token_indices();
    return out;
}

}  // namespace dqa
