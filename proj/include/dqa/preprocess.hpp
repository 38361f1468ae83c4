#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dqa/docmodel.hpp"

namespace dqa {

enum class Segment { Question, Table, Text, Visual };

// Fixed token ids; real words start at kFirstWordId.
struct SpecialIds {
    static constexpr int kCls = 0;
    static constexpr int kSep = 1;
    static constexpr int kUnk = 2;
    static constexpr int kNum = 3;
    static constexpr int kVis = 4;
    static constexpr int kFirstWordId = 5;
};

// Whole-word vocabulary over lowercased words. Rare words map to [UNK];
// rare words that parse as numbers map to [NUM] so unseen magnitudes share
// one id (their value still travels out-of-band as a NumberToken).
struct Vocab {
    std::vector<std::string> words;  // id - kFirstWordId -> word
    std::map<std::string, int> index;

    int size() const { return SpecialIds::kFirstWordId + static_cast<int>(words.size()); }
    int id_of(const std::string& raw) const;
    static Vocab build(const Dataset& ds, int min_freq);
};

struct TokenSource {
    // word tokens: page/block/word; visual tokens: grid coordinates in
    // page/block with word = -1; markers: all -1.
    int page_index = -1;
    int block_id = -1;
    int word_index = -1;
    bool is_word() const { return word_index >= 0; }
    bool operator==(const TokenSource&) const = default;
};

struct Token {
    int symbol = 0;
    BoundingBox bbox;
    Segment segment = Segment::Question;
    TokenSource source;
};

struct NumberToken {
    int token_index = 0;
    double value = 0.0;
};

struct IndexRange {
    int begin = 0, end = 0;  // half-open
    int size() const { return end - begin; }
    bool contains(int i) const { return begin <= i && i < end; }
    bool operator==(const IndexRange&) const = default;
};

struct PatchFeature {
    double mean_r = 0.0, mean_g = 0.0, mean_b = 0.0, darkness = 0.0;
    BoundingBox bbox;  // grid cell footprint on the 0..1000 grid
};

struct InputSequence {
    std::vector<Token> tokens;
    int cls_index = 0;
    IndexRange question_range, table_range, text_range, visual_range;
    std::vector<NumberToken> number_candidates;
    std::vector<PatchFeature> patches;  // row-major grid, one per visual token

    int length() const { return static_cast<int>(tokens.size()); }
    bool in_document(int i) const {
        return table_range.contains(i) || text_range.contains(i);
    }
    // document token absolute indices, in order
    std::vector<int> document_token_indices() const;
};

struct TableHeuristicConfig {
    double row_overlap = 0.5;     // of the smaller height
    double col_overlap = 0.5;     // of the smaller width
    int min_rows = 2;
    int min_cols = 2;
    double numeric_density = 0.4;
};

struct PreprocessConfig {
    int token_budget = 512;
    int patch_grid = 7;
    int vocab_min_freq = 2;
    TableHeuristicConfig table;
    std::string image_base_dir;  // resolves relative page image refs
};

// Strips currency symbols, commas, and a trailing '%'; "(1,320)" parses to
// -1320 (accounting negatives). Returns nothing for non-numeric text.
std::optional<double> parse_number(const std::string& text);

// Lowercase alphanumeric runs, used by the TF-IDF ranking.
std::vector<std::string> tfidf_tokenize(const std::string& text);

// Deterministic layout heuristic: vertical-overlap row grouping, horizontal
// column alignment across multi-block rows, then a 2x2-and-40%-numeric gate.
std::set<int> detect_table_blocks(const Page& page, const TableHeuristicConfig& cfg = {});

// Applies detect_table_blocks to every page, setting is_table flags.
void flag_tables(Document& doc, const TableHeuristicConfig& cfg = {});

// Non-table blocks of one page sorted by descending TF-IDF cosine similarity
// with the question; ties keep reading order. IDF is computed over the given
// blocks only.
std::vector<int> rank_text_blocks(const std::string& question,
                                  const std::vector<const TextBlock*>& blocks);

// Page with the most table-flagged blocks; ties pick the lower index;
// no tables anywhere picks page 0.
int select_major_table_page(const Document& doc);

// 8-bit grayscale or RGB image, row-major.
struct Image {
    int width = 0, height = 0, channels = 1;
    std::vector<uint8_t> pixels;
    uint8_t at(int x, int y, int c) const {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
};

Image load_pnm(const std::string& path);           // P5 / P6
void save_pgm(const Image& img, const std::string& path);

// Resizes to 224x224 (nearest neighbor), splits into a grid x grid raster of
// patches, and reduces each to channel means plus a darkness score in [0,1].
std::vector<PatchFeature> page_to_patches(const Image& img, int grid);
std::vector<PatchFeature> zero_patches(int grid);

// [CLS] question [SEP] table blocks [SEP] ranked text blocks [SEP] patches.
// Table flags and ranking are applied internally; `doc` is taken as already
// flagged when any is_table bit is set.
InputSequence assemble_input(const std::string& question, const Document& doc,
                             const Vocab& vocab, const PreprocessConfig& cfg);

}  // namespace dqa
