#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dqa/errors.hpp"

namespace dqa {

// Coordinates live on a 0..1000 grid, normalized from the source page size
// when the dataset file is produced. Page width/height are kept as metadata.
struct BoundingBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    bool valid() const {
        return 0 <= x0 && x0 <= x1 && x1 <= 1000 && 0 <= y0 && y0 <= y1 && y1 <= 1000;
    }
    bool contains(const BoundingBox& o) const {
        return x0 <= o.x0 && o.x1 <= x1 && y0 <= o.y0 && o.y1 <= y1;
    }
    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    bool operator==(const BoundingBox&) const = default;
};

struct Word {
    std::string text;
    BoundingBox bbox;
    bool operator==(const Word&) const = default;
};

struct TextBlock {
    int block_id = 0;
    std::vector<Word> words;
    BoundingBox bbox;
    bool is_table = false;  // assigned by preprocessing
    bool operator==(const TextBlock&) const = default;
};

struct Page {
    int page_index = 0;
    int width = 0;   // source pixel size
    int height = 0;
    std::optional<std::string> image_ref;  // path relative to the dataset file
    std::vector<TextBlock> blocks;
    bool operator==(const Page&) const = default;
};

struct Document {
    std::string doc_uid;
    std::vector<Page> pages;
    bool operator==(const Document&) const = default;
};

enum class AnswerType { Span, Spans, Counting, Arithmetic };
enum class Scale { None, Thousands, Millions, Billions, Percent };

const char* to_string(AnswerType t);
const char* to_string(Scale s);
AnswerType answer_type_from_string(const std::string& s);
Scale scale_from_string(const std::string& s);
double scale_factor(Scale s);

// page_index, block_id, [word_begin, word_end)
struct EvidenceSpan {
    int page_index = 0;
    int block_id = 0;
    int word_begin = 0;
    int word_end = 0;
    bool operator==(const EvidenceSpan&) const = default;
};

// Gold answer is either one number or an ordered list of strings.
using GoldAnswer = std::variant<double, std::vector<std::string>>;

struct QAPair {
    std::string qa_uid;
    std::string doc_uid;
    std::string question;
    GoldAnswer gold_answer;
    AnswerType answer_type = AnswerType::Span;
    Scale scale = Scale::None;
    std::optional<std::string> derivation;
    std::vector<EvidenceSpan> evidence;

    bool numeric_gold() const { return std::holds_alternative<double>(gold_answer); }
    double gold_number() const { return std::get<double>(gold_answer); }
    const std::vector<std::string>& gold_strings() const {
        return std::get<std::vector<std::string>>(gold_answer);
    }
    bool operator==(const QAPair&) const = default;
};

struct Dataset {
    std::string split;
    std::vector<Document> documents;             // file order
    std::map<std::string, size_t> doc_index;     // uid -> position
    std::vector<QAPair> qa_pairs;

    const Document& document_of(const QAPair& qa) const {
        return documents[doc_index.at(qa.doc_uid)];
    }
};

struct Violation {
    std::string field;    // e.g. "documents[d7].pages[0].blocks[3].bbox"
    std::string rule;     // which invariant failed
};

using ValidationReport = std::vector<Violation>;

// Empty report iff every structural invariant of the document holds.
ValidationReport validate_document(const Document& doc);
ValidationReport validate_dataset(const Dataset& ds);

// Loads and fully validates a dataset file. Throws malformed_input on schema
// or invariant violations (message names the offending record) and
// dangling_reference when a QA points at a missing doc_uid.
Dataset load_dataset(const std::string& path);
Dataset parse_dataset_json(const std::string& text, const std::string& origin);

std::string serialize_dataset(const Dataset& ds);
void save_dataset(const Dataset& ds, const std::string& path);

}  // namespace dqa
