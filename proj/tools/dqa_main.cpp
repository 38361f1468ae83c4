#include <cstdlib>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "dqa/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"document question answering with discrete reasoning"};
    app.require_subcommand(1);
    app.fallthrough(true);

    std::string config_path;
    if (const char* env = std::getenv("DQA_CONFIG")) config_path = env;
    app.add_option("--config", config_path, "JSON config file");
    std::optional<uint64_t> seed;
    app.add_option("--seed", seed, "override the config seed");
    std::optional<int> beam;
    app.add_option("--beam", beam, "override the beam width");
    std::optional<int> budget;
    app.add_option("--budget", budget, "override the token budget");

    auto* gen = app.add_subcommand("generate", "write synthetic dataset splits");
    std::string gen_out;
    gen->add_option("--out", gen_out, "output directory")->required();

    auto* train = app.add_subcommand("train", "train a model on a dataset directory");
    std::string train_dataset, train_out;
    train->add_option("--dataset", train_dataset, "directory with train.json/dev.json")
        ->required();
    train->add_option("--out", train_out, "output directory")->required();

    auto* predict = app.add_subcommand("predict", "write predictions for a dataset");
    std::string pred_ckpt, pred_dataset, pred_out;
    predict->add_option("--checkpoint", pred_ckpt, "checkpoint file")->required();
    predict->add_option("--dataset", pred_dataset, "dataset JSON file")->required();
    predict->add_option("--out", pred_out, "predictions JSONL path")->required();

    auto* eval = app.add_subcommand("evaluate", "score predictions against gold");
    std::string eval_gold, eval_pred, eval_out;
    eval->add_option("--dataset", eval_gold, "gold dataset JSON file")->required();
    eval->add_option("--pred", eval_pred, "predictions JSONL file")->required();
    eval->add_option("--out", eval_out, "report JSON path");

    auto* inspect = app.add_subcommand("inspect", "dump one qa pair end to end");
    std::string ins_dataset, ins_uid, ins_ckpt;
    inspect->add_option("--dataset", ins_dataset, "dataset JSON file")->required();
    inspect->add_option("--uid", ins_uid, "qa uid")->required();
    inspect->add_option("--checkpoint", ins_ckpt, "optional checkpoint file");

    CLI11_PARSE(app, argc, argv);

    try {
        dqa::RunConfig cfg = dqa::RunConfig::load(config_path);
        if (seed) {
            cfg.seed = *seed;
            cfg.train.seed = *seed;
            cfg.encoder.seed = *seed;
        }
        if (beam) cfg.beam = *beam;
        if (budget) cfg.preprocess.token_budget = *budget;

        if (gen->parsed()) return dqa::cmd_generate(cfg, gen_out);
        if (train->parsed()) return dqa::cmd_train(cfg, train_dataset, train_out);
        if (predict->parsed())
            return dqa::cmd_predict(cfg, pred_ckpt, pred_dataset, pred_out);
        if (eval->parsed()) return dqa::cmd_evaluate(eval_gold, eval_pred, eval_out);
        if (inspect->parsed())
            return dqa::cmd_inspect(cfg, ins_dataset, ins_uid, ins_ckpt);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
