#include "dqa/model.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace dqa {

using json = nlohmann::ordered_json;

void Model::build() {
    if (!config.encoder.valid()) throw error("invalid encoder configuration");
    Encoder::define_params(params, config.encoder);
    Heads::define_params(params, config.encoder.hidden);
    TreeDecoder::define_params(params, config.encoder.hidden,
                               static_cast<int>(config.constants.size()));
    init_params(params, config.encoder.seed);
}

namespace {

json encoder_config_to_json(const EncoderConfig& c) {
    json j;
    j["hidden"] = c.hidden;
    j["layers"] = c.layers;
    j["heads"] = c.heads;
    j["ffn_dim"] = c.ffn_dim;
    j["vocab_size"] = c.vocab_size;
    j["layout_buckets"] = c.layout_buckets;
    j["max_seq_len"] = c.max_seq_len;
    j["seed"] = c.seed;
    return j;
}

EncoderConfig encoder_config_from_json(const json& j) {
    EncoderConfig c;
    c.hidden = j.at("hidden").get<int>();
    c.layers = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.ffn_dim = j.at("ffn_dim").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.layout_buckets = j.at("layout_buckets").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

json preprocess_config_to_json(const PreprocessConfig& c) {
    json j;
    j["token_budget"] = c.token_budget;
    j["patch_grid"] = c.patch_grid;
    j["vocab_min_freq"] = c.vocab_min_freq;
    j["table_row_overlap"] = c.table.row_overlap;
    j["table_col_overlap"] = c.table.col_overlap;
    j["table_min_rows"] = c.table.min_rows;
    j["table_min_cols"] = c.table.min_cols;
    j["table_numeric_density"] = c.table.numeric_density;
    return j;
}

PreprocessConfig preprocess_config_from_json(const json& j) {
    PreprocessConfig c;
    c.token_budget = j.at("token_budget").get<int>();
    c.patch_grid = j.at("patch_grid").get<int>();
    c.vocab_min_freq = j.at("vocab_min_freq").get<int>();
    c.table.row_overlap = j.at("table_row_overlap").get<double>();
    c.table.col_overlap = j.at("table_col_overlap").get<double>();
    c.table.min_rows = j.at("table_min_rows").get<int>();
    c.table.min_cols = j.at("table_min_cols").get<int>();
    c.table.numeric_density = j.at("table_numeric_density").get<double>();
    return c;
}

constexpr char kMagic[] = "DQACKPT\n";

}  // namespace

void save_checkpoint(const Model& m, const std::string& path) {
    json header;
    header["version"] = 1;
    header["encoder"] = encoder_config_to_json(m.config.encoder);
    header["preprocess"] = preprocess_config_to_json(m.config.preprocess);
    header["constants"] = m.config.constants;
    header["node_cap"] = m.config.node_cap;
    header["max_span_len"] = m.config.max_span_len;
    header["count_unique_spans"] = m.config.count_unique_spans;
    header["vocab"] = m.vocab.words;
    json dir = json::array();
    for (const auto& [name, p] : m.params.all()) {
        json e;
        e["name"] = name;
        e["rows"] = p.value.rows;
        e["cols"] = p.value.cols;
        dir.push_back(std::move(e));
    }
    header["tensors"] = std::move(dir);
    const std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("cannot write checkpoint: " + path);
    out.write(kMagic, 8);
    uint64_t hlen = htext.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& [name, p] : m.params.all())
        out.write(reinterpret_cast<const char*>(p.value.d.data()),
                  static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    if (!out) throw error("failed while writing checkpoint: " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
        throw error(path + ": not a checkpoint file");
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    json header;
    try {
        header = json::parse(htext);
    } catch (const json::exception& e) {
        throw error(path + ": corrupt checkpoint header: " + e.what());
    }
    if (!header.contains("version"))
        throw error(path + ": checkpoint header is missing the version field");
    if (header.at("version").get<int>() != 1)
        throw error(path + ": unsupported checkpoint version");

    Model m;
    m.config.encoder = encoder_config_from_json(header.at("encoder"));
    m.config.preprocess = preprocess_config_from_json(header.at("preprocess"));
    m.config.constants = header.at("constants").get<std::vector<double>>();
    m.config.node_cap = header.at("node_cap").get<int>();
    m.config.max_span_len = header.at("max_span_len").get<int>();
    m.config.count_unique_spans = header.value("count_unique_spans", false);
    m.vocab.words = header.at("vocab").get<std::vector<std::string>>();
    for (size_t i = 0; i < m.vocab.words.size(); ++i)
        m.vocab.index[m.vocab.words[i]] = SpecialIds::kFirstWordId + static_cast<int>(i);

    for (const json& e : header.at("tensors")) {
        nn::Param& p = m.params.define(e.at("name").get<std::string>(),
                                       e.at("rows").get<int>(), e.at("cols").get<int>());
        in.read(reinterpret_cast<char*>(p.value.d.data()),
                static_cast<std::streamsize>(p.value.size() * sizeof(double)));
        if (in.gcount() != static_cast<std::streamsize>(p.value.size() * sizeof(double)))
            throw error(path + ": truncated tensor data for " + p.name);
    }
    return m;
}

}  // namespace dqa
