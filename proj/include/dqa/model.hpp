#pragma once

#include <string>
#include <vector>

#include "dqa/encoder.hpp"
#include "dqa/heads.hpp"
#include "dqa/preprocess.hpp"
#include "dqa/treegen.hpp"

namespace dqa {

struct ModelConfig {
    EncoderConfig encoder;
    PreprocessConfig preprocess;
    std::vector<double> constants{0.0, 1.0, 100.0};  // V_con
    int node_cap = 15;
    int max_span_len = 40;
    // counting uses the raw decoded span count; flip to count unique texts
    bool count_unique_spans = false;
};

// Everything a checkpoint carries: configuration, vocabulary and parameters.
struct Model {
    ModelConfig config;
    Vocab vocab;
    nn::ParamStore params;

    // defines every tensor (encoder, heads, tree decoder) and initializes
    // them from config.encoder.seed
    void build();

    Encoder make_encoder() { return Encoder(params, config.encoder); }
    Heads make_heads() { return Heads(params, config.encoder.hidden); }
    TreeDecoder make_tree_decoder() {
        return TreeDecoder(params, config.encoder.hidden,
                           static_cast<int>(config.constants.size()));
    }
};

// Versioned container: a JSON header (version, configs, vocabulary, tensor
// directory) followed by raw little-endian doubles.
void save_checkpoint(const Model& m, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace dqa
