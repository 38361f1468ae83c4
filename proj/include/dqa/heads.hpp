#pragma once

#include <array>
#include <vector>

#include "dqa/autograd.hpp"
#include "dqa/encoder.hpp"
#include "dqa/preprocess.hpp"

namespace dqa {

struct HeadDistribution {
    std::array<double, 4> p{};  // indexed by AnswerType
};

struct ScaleDistribution {
    std::array<double, 5> p{};  // indexed by Scale
};

// per document token, distributions over {B, I, O}
enum BioTag { kTagB = 0, kTagI = 1, kTagO = 2 };

struct TagSequence {
    std::vector<int> token_indices;                 // absolute positions
    std::vector<std::array<double, 3>> probs;
    std::vector<int> argmax() const;
};

struct SpanPrediction {
    int start = 0, end = 0;  // absolute token indices, inclusive
    double log_prob = 0.0;
};

// A decoded evidence run: absolute token indices [begin, end).
struct TokenSpan {
    int begin = 0, end = 0;
    bool operator==(const TokenSpan&) const = default;
    bool operator<(const TokenSpan& o) const {
        return begin != o.begin ? begin < o.begin : end < o.end;
    }
};

class Heads {
public:
    Heads(nn::ParamStore& store, int hidden) : store_(store), hidden_(hidden) {}

    static void define_params(nn::ParamStore& store, int hidden);

    // tape builders (training and inference share these)
    nn::Var head_logits(nn::Tape& t, nn::Var cls) const;            // 1 x 4
    nn::Var bio_logits(nn::Tape& t, nn::Var doc_mat) const;         // Ld x 3
    nn::Var span_start_logits(nn::Tape& t, nn::Var doc_mat) const;  // 1 x Ld
    nn::Var span_end_logits(nn::Tape& t, nn::Var doc_mat) const;    // 1 x Ld
    nn::Var scale_logits_arith(nn::Tape& t, nn::Var cls, nn::Var h_num) const;  // 1 x 5
    nn::Var scale_logits_other(nn::Tape& t, nn::Var cls) const;                 // 1 x 5

private:
    nn::ParamStore& store_;
    int hidden_;
};

// plain-value wrappers over the builders
HeadDistribution predict_head(const nn::Mat& cls, nn::ParamStore& store);
TagSequence tag_bio(nn::Tape& t, const Heads& heads, const EncodedVars& enc);

// Best valid span under start-prob x end-prob with start <= end,
// end - start < max_span_len, both endpoints on document tokens. Throws
// no_valid_span when the document slice is empty.
SpanPrediction predict_span(const std::vector<double>& start_log_probs,
                            const std::vector<double>& end_log_probs,
                            const std::vector<int>& doc_rows, int max_span_len);

// Maximal B..I runs; a stray I at a run boundary is promoted to B; runs split
// at block changes. `labels` parallel to the document token order of `seq`.
std::vector<TokenSpan> decode_bio(const std::vector<int>& labels,
                                  const InputSequence& seq);

// Inverse of decode_bio for well-formed span sets; used to build gold tags.
std::vector<int> encode_spans(const std::vector<TokenSpan>& spans,
                              const InputSequence& seq);

ScaleDistribution predict_scale(const nn::Mat& cls, const nn::Mat& doc_mat,
                                const std::vector<int>& tagged_rows,
                                AnswerType answer_type, nn::ParamStore& store);

}  // namespace dqa
