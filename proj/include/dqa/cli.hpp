#pragma once

#include <optional>
#include <string>

#include "dqa/model.hpp"
#include "dqa/synthgen.hpp"
#include "dqa/training.hpp"

namespace dqa {

// Merged configuration for every command: defaults, overridden by a JSON
// config file (unknown keys are an error), overridden by flags.
struct RunConfig {
    uint64_t seed = 7;
    struct GenSection {
        int train_documents = 200;
        int dev_documents = 25;
        int test_documents = 25;
        int qas_per_doc = 6;
        int words_per_page = 495;
        double two_page_fraction = 0.10;
        std::array<double, 4> type_mixture{0.43, 0.13, 0.02, 0.42};
        std::array<double, 5> scale_mixture{0.25, 0.25, 0.35, 0.15, 0.0};
        bool render_images = true;
    } gen;
    EncoderConfig encoder;
    PreprocessConfig preprocess;
    TrainConfig train;
    std::vector<double> constants{0.0, 1.0, 100.0};
    int node_cap = 15;
    int max_span_len = 40;
    bool count_unique_spans = false;
    int beam = 4;

    GeneratorConfig generator_for(const std::string& split, int documents) const;
    ModelConfig model_config() const;

    static RunConfig load(const std::string& path);  // empty path -> defaults
};

// exit codes: 0 success, 1 per-record failures, 2 fatal
int cmd_generate(const RunConfig& cfg, const std::string& out_dir);
int cmd_train(const RunConfig& cfg, const std::string& dataset_dir,
              const std::string& out_dir);
int cmd_predict(const RunConfig& cfg, const std::string& checkpoint_path,
                const std::string& dataset_file, const std::string& out_file);
int cmd_evaluate(const std::string& gold_file, const std::string& pred_file,
                 const std::string& report_out);
int cmd_inspect(const RunConfig& cfg, const std::string& dataset_file,
                const std::string& qa_uid, const std::string& checkpoint_path);

}  // namespace dqa
