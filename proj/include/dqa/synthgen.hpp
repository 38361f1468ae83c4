#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dqa/docmodel.hpp"
#include "dqa/preprocess.hpp"

namespace dqa {

// Knobs for the synthetic financial-report generator. Answer-type mixture
// defaults to the observed production distribution of span / multi-span /
// count / arithmetic questions; scale mixture picks each table's unit.
struct GeneratorConfig {
    uint64_t seed = 7;
    std::string split = "train";
    int document_count = 20;
    int qas_per_doc = 6;
    int words_per_page = 495;
    double two_page_fraction = 0.10;
    std::array<double, 4> type_mixture{0.43, 0.13, 0.02, 0.42};
    // table unit mixture over {none, thousand, million, billion, percent};
    // percent stays 0 by default (percent answers come from derivations)
    std::array<double, 5> scale_mixture{0.25, 0.25, 0.35, 0.15, 0.0};
    bool render_images = true;

    void validate() const;  // mixtures must sum to 1 within 1e-9
};

struct QAManifest {
    std::string uid;
    std::string template_id;
    std::vector<double> sampled_values;
};

struct PageManifest {
    int page_index = 0;
    std::vector<int> table_blocks;  // ground-truth table membership
};

struct DocManifest {
    std::string uid;
    std::vector<PageManifest> pages;
    std::vector<QAManifest> qas;
};

struct Manifest {
    uint64_t seed = 0;
    std::string split;
    int document_count = 0;
    int qa_count = 0;
    std::map<std::string, int> type_counts;
    std::vector<DocManifest> documents;

    std::string to_json() const;
    static Manifest from_json_file(const std::string& path);
};

struct GeneratedSplit {
    Dataset dataset;
    Manifest manifest;
};

// Fully deterministic for a given (seed, split): documents draw from
// per-document substreams. Image refs are set only when render_images is on;
// the actual files come from render_page.
GeneratedSplit generate_dataset(const GeneratorConfig& cfg);

// White page with one dark box per word, at the recorded pixel size.
Image render_page(const Page& page);

// Writes dataset.json, manifest.json and (optionally) images/ under out_dir.
void write_split(const GeneratedSplit& split, const std::string& out_dir);

}  // namespace dqa
