#pragma once

#include <cstdint>
#include <vector>

#include "dqa/autograd.hpp"
#include "dqa/preprocess.hpp"

namespace dqa {

struct EncoderConfig {
    int hidden = 128;
    int layers = 4;
    int heads = 4;
    int ffn_dim = 512;
    int vocab_size = 0;       // filled in after the vocabulary is built
    int layout_buckets = 1001;  // 0..1000 grid
    int max_seq_len = 512;
    uint64_t seed = 7;

    bool valid() const {
        return hidden >= 1 && layers >= 1 && heads >= 1 && hidden % heads == 0 &&
               ffn_dim >= 1 && vocab_size >= 1 && layout_buckets >= 1 && max_seq_len >= 1;
    }
};

// Tape handles for one encoded sequence.
struct EncodedVars {
    nn::Var X;    // L x H
    nn::Var cls;  // 1 x H
    IndexRange question_range, table_range, text_range, visual_range;
    std::vector<int> doc_rows;  // table + text token indices, ascending
};

// Per layer and head attention matrices, recorded when requested by tests.
struct AttentionCapture {
    std::vector<nn::Mat> probs;
};

class Encoder {
public:
    Encoder(nn::ParamStore& store, const EncoderConfig& cfg)
        : store_(store), cfg_(cfg) {}

    static void define_params(nn::ParamStore& store, const EncoderConfig& cfg);

    // Embedding sum (token/positional/6x layout/segment, visual projection for
    // patch tokens) followed by pre-LN self-attention blocks and a final norm.
    EncodedVars encode(nn::Tape& t, const InputSequence& seq,
                       AttentionCapture* capture = nullptr,
                       const std::vector<int>* position_override = nullptr) const;

private:
    nn::ParamStore& store_;
    EncoderConfig cfg_;
};

// Deterministic initialization of every defined tensor: weights ~ N(0, 0.02)
// from a per-tensor stream, biases zero, layer-norm gains one.
void init_params(nn::ParamStore& store, uint64_t seed);

}  // namespace dqa
