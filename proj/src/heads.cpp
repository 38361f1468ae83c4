#include "dqa/heads.hpp"

#include <algorithm>
#include <cmath>

namespace dqa {

void Heads::define_params(nn::ParamStore& store, int hidden) {
    store.define("head.w1", hidden, hidden);
    store.define("head.b1", 1, hidden);
    store.define("head.w2", hidden, 4);
    store.define("head.b2", 1, 4);
    store.define("span.start.w", 1, hidden);
    store.define("span.end.w", 1, hidden);
    store.define("bio.w1", hidden, hidden);
    store.define("bio.b1", 1, hidden);
    store.define("bio.w2", hidden, 3);
    store.define("bio.b2", 1, 3);
    store.define("scale.arith.w1", 2 * hidden, hidden);
    store.define("scale.arith.b1", 1, hidden);
    store.define("scale.arith.w2", hidden, 5);
    store.define("scale.arith.b2", 1, 5);
    store.define("scale.other.w1", hidden, hidden);
    store.define("scale.other.b1", 1, hidden);
    store.define("scale.other.w2", hidden, 5);
    store.define("scale.other.b2", 1, 5);
}

namespace {
nn::Var ffn2(nn::Tape& t, nn::ParamStore& store, const std::string& prefix, nn::Var x) {
    nn::Var h = t.gelu(t.add_rowvec(t.matmul(x, t.param(store.get(prefix + ".w1"))),
                                    t.param(store.get(prefix + ".b1"))));
    return t.add_rowvec(t.matmul(h, t.param(store.get(prefix + ".w2"))),
                        t.param(store.get(prefix + ".b2")));
}
}  // namespace

nn::Var Heads::head_logits(nn::Tape& t, nn::Var cls) const {
    return ffn2(t, store_, "head", cls);
}

nn::Var Heads::bio_logits(nn::Tape& t, nn::Var doc_mat) const {
    return ffn2(t, store_, "bio", doc_mat);
}

nn::Var Heads::span_start_logits(nn::Tape& t, nn::Var doc_mat) const {
    return t.matmul_nt(t.param(store_.get("span.start.w")), doc_mat);
}

nn::Var Heads::span_end_logits(nn::Tape& t, nn::Var doc_mat) const {
    return t.matmul_nt(t.param(store_.get("span.end.w")), doc_mat);
}

nn::Var Heads::scale_logits_arith(nn::Tape& t, nn::Var cls, nn::Var h_num) const {
    return ffn2(t, store_, "scale.arith", t.concat_cols(cls, h_num));
}

nn::Var Heads::scale_logits_other(nn::Tape& t, nn::Var cls) const {
    return ffn2(t, store_, "scale.other", cls);
}

std::vector<int> TagSequence::argmax() const {
    std::vector<int> out;
    out.reserve(probs.size());
    for (const auto& p : probs) {
        int best = 0;
        for (int i = 1; i < 3; ++i)
            if (p[i] > p[best]) best = i;
        out.push_back(best);
    }
    return out;
}

HeadDistribution predict_head(const nn::Mat& cls, nn::ParamStore& store) {
    nn::Tape t;
    Heads heads(store, cls.cols);
    nn::Var probs = t.softmax_rows(heads.head_logits(t, t.input(cls)));
    HeadDistribution out;
    for (int i = 0; i < 4; ++i) out.p[i] = t.val(probs).d[i];
    return out;
}

TagSequence tag_bio(nn::Tape& t, const Heads& heads, const EncodedVars& enc) {
    TagSequence out;
    out.token_indices = enc.doc_rows;
    if (enc.doc_rows.empty()) return out;
    nn::Var doc_mat = t.gather_rows(enc.X, enc.doc_rows);
    nn::Var probs = t.softmax_rows(heads.bio_logits(t, doc_mat));
    const nn::Mat& m = t.val(probs);
    out.probs.resize(enc.doc_rows.size());
    for (size_t i = 0; i < enc.doc_rows.size(); ++i)
        for (int c = 0; c < 3; ++c) out.probs[i][c] = m.at(static_cast<int>(i), c);
    return out;
}

SpanPrediction predict_span(const std::vector<double>& start_log_probs,
                            const std::vector<double>& end_log_probs,
                            const std::vector<int>& doc_rows, int max_span_len) {
    const int n = static_cast<int>(doc_rows.size());
    if (n == 0) throw no_valid_span("document slice is empty");
    SpanPrediction best;
    bool found = false;
    for (int i = 0; i < n; ++i) {
        for (int j = i; j < n && doc_rows[j] - doc_rows[i] < max_span_len; ++j) {
            double lp = start_log_probs[i] + end_log_probs[j];
            if (!found || lp > best.log_prob) {
                best.start = doc_rows[i];
                best.end = doc_rows[j];
                best.log_prob = lp;
                found = true;
            }
        }
    }
    return best;
}

std::vector<TokenSpan> decode_bio(const std::vector<int>& labels,
                                  const InputSequence& seq) {
    std::vector<int> rows = seq.document_token_indices();
    std::vector<TokenSpan> out;
    int open_begin = -1;
    int prev_row = -2;
    auto close = [&](int end_row) {
        if (open_begin >= 0) out.push_back({open_begin, end_row + 1});
        open_begin = -1;
    };
    for (size_t i = 0; i < rows.size(); ++i) {
        const int row = rows[i];
        const bool block_change =
            i == 0 || row != prev_row + 1 ||
            seq.tokens[row].source.page_index != seq.tokens[prev_row].source.page_index ||
            seq.tokens[row].source.block_id != seq.tokens[prev_row].source.block_id;
        switch (labels[i]) {
            case kTagB:
                close(prev_row);
                open_begin = row;
                break;
            case kTagI:
                if (open_begin >= 0 && !block_change) break;  // extend
                // stray I (run start or block change) acts as B
                close(prev_row);
                open_begin = row;
                break;
            default:  // O
                close(prev_row);
                break;
        }
        prev_row = row;
    }
    close(prev_row);
    return out;
}

std::vector<int> encode_spans(const std::vector<TokenSpan>& spans,
                              const InputSequence& seq) {
    std::vector<int> rows = seq.document_token_indices();
    std::map<int, size_t> pos_of;
    for (size_t i = 0; i < rows.size(); ++i) pos_of[rows[i]] = i;
    std::vector<int> labels(rows.size(), kTagO);
    for (const TokenSpan& s : spans) {
        for (int row = s.begin; row < s.end; ++row) {
            auto it = pos_of.find(row);
            if (it == pos_of.end()) throw error("span covers a non-document token");
            labels[it->second] = (row == s.begin) ? kTagB : kTagI;
        }
    }
    return labels;
}

ScaleDistribution predict_scale(const nn::Mat& cls, const nn::Mat& doc_mat,
                                const std::vector<int>& tagged_rows,
                                AnswerType answer_type, nn::ParamStore& store) {
    nn::Tape t;
    Heads heads(store, cls.cols);
    nn::Var cls_v = t.input(cls);
    nn::Var logits;
    if (answer_type == AnswerType::Arithmetic) {
        nn::Var h_num;
        if (tagged_rows.empty()) {
            h_num = t.zeros(1, cls.cols);
        } else {
            h_num = t.mean_rows(t.gather_rows(t.input(doc_mat), tagged_rows));
        }
        logits = heads.scale_logits_arith(t, cls_v, h_num);
    } else {
        logits = heads.scale_logits_other(t, cls_v);
    }
    nn::Var probs = t.softmax_rows(logits);
    ScaleDistribution out;
    for (int i = 0; i < 5; ++i) out.p[i] = t.val(probs).d[i];
    return out;
}

}  // namespace dqa
