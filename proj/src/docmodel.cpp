#include "dqa/docmodel.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace dqa {

using json = nlohmann::ordered_json;

const char* to_string(AnswerType t) {
    switch (t) {
        case AnswerType::Span: return "span";
        case AnswerType::Spans: return "multi-span";
        case AnswerType::Counting: return "count";
        case AnswerType::Arithmetic: return "arithmetic";
    }
    return "?";
}

const char* to_string(Scale s) {
    switch (s) {
        case Scale::None: return "";
        case Scale::Thousands: return "thousand";
        case Scale::Millions: return "million";
        case Scale::Billions: return "billion";
        case Scale::Percent: return "percent";
    }
    return "?";
}

AnswerType answer_type_from_string(const std::string& s) {
    if (s == "span") return AnswerType::Span;
    if (s == "multi-span") return AnswerType::Spans;
    if (s == "count") return AnswerType::Counting;
    if (s == "arithmetic") return AnswerType::Arithmetic;
    throw malformed_input("unknown answer_type: \"" + s + "\"");
}

Scale scale_from_string(const std::string& s) {
    if (s.empty()) return Scale::None;
    if (s == "thousand") return Scale::Thousands;
    if (s == "million") return Scale::Millions;
    if (s == "billion") return Scale::Billions;
    if (s == "percent") return Scale::Percent;
    throw malformed_input("unknown scale: \"" + s + "\"");
}

double scale_factor(Scale s) {
    switch (s) {
        case Scale::None: return 1.0;
        case Scale::Thousands: return 1e3;
        case Scale::Millions: return 1e6;
        case Scale::Billions: return 1e9;
        case Scale::Percent: return 1e-2;
    }
    return 1.0;
}

namespace {

void check_bbox(const BoundingBox& b, const std::string& where, ValidationReport& out) {
    if (!b.valid())
        out.push_back({where, "bbox must satisfy 0 <= x0 <= x1 <= 1000 and 0 <= y0 <= y1 <= 1000"});
}

}  // namespace

ValidationReport validate_document(const Document& doc) {
    ValidationReport out;
    const std::string base = "documents[" + doc.doc_uid + "]";
    if (doc.pages.empty()) out.push_back({base + ".pages", "document must have at least one page"});
    std::set<int> page_indices;
    for (size_t pi = 0; pi < doc.pages.size(); ++pi) {
        const Page& page = doc.pages[pi];
        const std::string pwhere = base + ".pages[" + std::to_string(pi) + "]";
        if (page.page_index < 0)
            out.push_back({pwhere + ".page_index", "page_index must be >= 0"});
        if (!page_indices.insert(page.page_index).second)
            out.push_back({pwhere + ".page_index", "page_index must be unique within the document"});
        std::set<int> block_ids;
        for (size_t bi = 0; bi < page.blocks.size(); ++bi) {
            const TextBlock& blk = page.blocks[bi];
            const std::string bwhere = pwhere + ".blocks[" + std::to_string(bi) + "]";
            check_bbox(blk.bbox, bwhere + ".bbox", out);
            if (blk.words.empty())
                out.push_back({bwhere + ".words", "block must contain at least one word"});
            if (!block_ids.insert(blk.block_id).second)
                out.push_back({bwhere + ".id", "block_id must be unique within the page"});
            for (size_t wi = 0; wi < blk.words.size(); ++wi) {
                const Word& w = blk.words[wi];
                const std::string wwhere = bwhere + ".words[" + std::to_string(wi) + "]";
                if (w.text.empty())
                    out.push_back({wwhere + ".t", "word text must be non-empty"});
                if (w.text.find('\n') != std::string::npos)
                    out.push_back({wwhere + ".t", "word text must not contain a newline"});
                check_bbox(w.bbox, wwhere + ".bbox", out);
                if (w.bbox.valid() && blk.bbox.valid() && !blk.bbox.contains(w.bbox))
                    out.push_back({wwhere + ".bbox", "word bbox must lie inside its block bbox"});
            }
        }
        // ids contiguous in reading order: 0..n-1 as stored
        for (size_t bi = 0; bi < page.blocks.size(); ++bi) {
            if (page.blocks[bi].block_id != static_cast<int>(bi)) {
                out.push_back({pwhere + ".blocks",
                               "block_ids must be contiguous 0..n-1 in reading order"});
                break;
            }
        }
    }
    return out;
}

ValidationReport validate_dataset(const Dataset& ds) {
    ValidationReport out;
    std::set<std::string> uids;
    for (const Document& d : ds.documents) {
        if (!uids.insert(d.doc_uid).second)
            out.push_back({"documents[" + d.doc_uid + "]", "doc_uid must be unique within the split"});
        auto r = validate_document(d);
        out.insert(out.end(), r.begin(), r.end());
    }
    for (const QAPair& qa : ds.qa_pairs) {
        const std::string base = "qas[" + qa.qa_uid + "]";
        if (qa.answer_type == AnswerType::Arithmetic) {
            if (!qa.derivation.has_value())
                out.push_back({base + ".derivation", "arithmetic answers require a derivation"});
            if (!qa.numeric_gold())
                out.push_back({base + ".answer", "arithmetic answers must be numeric"});
        }
        if (qa.answer_type == AnswerType::Counting) {
            if (!qa.numeric_gold() || qa.gold_number() < 0 ||
                qa.gold_number() != static_cast<long long>(qa.gold_number()))
                out.push_back({base + ".answer", "count answers must be non-negative integers"});
        }
        if (qa.answer_type == AnswerType::Spans &&
            (qa.numeric_gold() || qa.gold_strings().size() < 2))
            out.push_back({base + ".answer", "multi-span answers must list at least two strings"});
        if (qa.answer_type == AnswerType::Span &&
            (!qa.numeric_gold() && qa.gold_strings().size() != 1))
            out.push_back({base + ".answer", "span answers must be a single string"});
    }
    return out;
}

namespace {

json require(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key))
        throw malformed_input(where + ": missing field \"" + key + "\"");
    return j.at(key);
}

BoundingBox bbox_from_json(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 4)
        throw malformed_input(where + ": bbox must be [x0,y0,x1,y1]");
    BoundingBox b;
    b.x0 = j[0].get<int>();
    b.y0 = j[1].get<int>();
    b.x1 = j[2].get<int>();
    b.y1 = j[3].get<int>();
    return b;
}

json bbox_to_json(const BoundingBox& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

}  // namespace

Dataset parse_dataset_json(const std::string& text, const std::string& origin) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw malformed_input(origin + ": invalid JSON: " + e.what());
    }
    Dataset ds;
    try {
        ds.split = require(root, "split", origin).get<std::string>();
        for (const json& jd : require(root, "documents", origin)) {
            Document doc;
            doc.doc_uid = require(jd, "uid", origin).get<std::string>();
            const std::string dwhere = origin + ": document \"" + doc.doc_uid + "\"";
            for (const json& jp : require(jd, "pages", dwhere)) {
                Page page;
                page.page_index = require(jp, "index", dwhere).get<int>();
                page.width = require(jp, "width", dwhere).get<int>();
                page.height = require(jp, "height", dwhere).get<int>();
                if (jp.contains("image")) page.image_ref = jp.at("image").get<std::string>();
                for (const json& jb : require(jp, "blocks", dwhere)) {
                    TextBlock blk;
                    blk.block_id = require(jb, "id", dwhere).get<int>();
                    blk.bbox = bbox_from_json(require(jb, "bbox", dwhere), dwhere);
                    for (const json& jw : require(jb, "words", dwhere)) {
                        Word w;
                        w.text = require(jw, "t", dwhere).get<std::string>();
                        w.bbox = bbox_from_json(require(jw, "bbox", dwhere), dwhere);
                        blk.words.push_back(std::move(w));
                    }
                    page.blocks.push_back(std::move(blk));
                }
                doc.pages.push_back(std::move(page));
            }
            if (ds.doc_index.count(doc.doc_uid))
                throw malformed_input(dwhere + ": duplicate doc_uid");
            ds.doc_index[doc.doc_uid] = ds.documents.size();
            ds.documents.push_back(std::move(doc));
        }
        for (const json& jq : require(root, "qas", origin)) {
            QAPair qa;
            qa.qa_uid = require(jq, "uid", origin).get<std::string>();
            const std::string qwhere = origin + ": qa \"" + qa.qa_uid + "\"";
            qa.doc_uid = require(jq, "doc_uid", qwhere).get<std::string>();
            qa.question = require(jq, "question", qwhere).get<std::string>();
            const json ans = require(jq, "answer", qwhere);
            if (ans.is_number()) {
                qa.gold_answer = ans.get<double>();
            } else if (ans.is_array()) {
                std::vector<std::string> parts;
                for (const json& a : ans) parts.push_back(a.get<std::string>());
                qa.gold_answer = std::move(parts);
            } else {
                throw malformed_input(qwhere + ": answer must be a number or a string array");
            }
            qa.answer_type =
                answer_type_from_string(require(jq, "answer_type", qwhere).get<std::string>());
            qa.scale = scale_from_string(require(jq, "scale", qwhere).get<std::string>());
            if (jq.contains("derivation")) qa.derivation = jq.at("derivation").get<std::string>();
            if (jq.contains("evidence")) {
                for (const json& je : jq.at("evidence")) {
                    if (!je.is_array() || je.size() != 3 || !je[2].is_array() || je[2].size() != 2)
                        throw malformed_input(qwhere +
                                              ": evidence entries must be [page, block, [begin, end]]");
                    EvidenceSpan ev;
                    ev.page_index = je[0].get<int>();
                    ev.block_id = je[1].get<int>();
                    ev.word_begin = je[2][0].get<int>();
                    ev.word_end = je[2][1].get<int>();
                    qa.evidence.push_back(ev);
                }
            }
            if (!ds.doc_index.count(qa.doc_uid))
                throw dangling_reference(qwhere + ": references missing doc_uid \"" +
                                         qa.doc_uid + "\"");
            ds.qa_pairs.push_back(std::move(qa));
        }
    } catch (const json::exception& e) {
        throw malformed_input(origin + ": schema error: " + e.what());
    }

    ValidationReport report = validate_dataset(ds);
    if (!report.empty())
        throw malformed_input(origin + ": invariant violation at " + report.front().field +
                              ": " + report.front().rule);
    return ds;
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw malformed_input("cannot open dataset file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_dataset_json(ss.str(), path);
}

std::string serialize_dataset(const Dataset& ds) {
    json root;
    root["split"] = ds.split;
    json docs = json::array();
    for (const Document& d : ds.documents) {
        json jd;
        jd["uid"] = d.doc_uid;
        json pages = json::array();
        for (const Page& p : d.pages) {
            json jp;
            jp["index"] = p.page_index;
            jp["width"] = p.width;
            jp["height"] = p.height;
            if (p.image_ref) jp["image"] = *p.image_ref;
            json blocks = json::array();
            for (const TextBlock& b : p.blocks) {
                json jb;
                jb["id"] = b.block_id;
                jb["bbox"] = bbox_to_json(b.bbox);
                json words = json::array();
                for (const Word& w : b.words) {
                    json jw;
                    jw["t"] = w.text;
                    jw["bbox"] = bbox_to_json(w.bbox);
                    words.push_back(std::move(jw));
                }
                jb["words"] = std::move(words);
                blocks.push_back(std::move(jb));
            }
            jp["blocks"] = std::move(blocks);
            pages.push_back(std::move(jp));
        }
        jd["pages"] = std::move(pages);
        docs.push_back(std::move(jd));
    }
    root["documents"] = std::move(docs);
    json qas = json::array();
    for (const QAPair& qa : ds.qa_pairs) {
        json jq;
        jq["uid"] = qa.qa_uid;
        jq["doc_uid"] = qa.doc_uid;
        jq["question"] = qa.question;
        if (qa.numeric_gold())
            jq["answer"] = qa.gold_number();
        else
            jq["answer"] = qa.gold_strings();
        jq["answer_type"] = to_string(qa.answer_type);
        jq["scale"] = to_string(qa.scale);
        if (qa.derivation) jq["derivation"] = *qa.derivation;
        if (!qa.evidence.empty()) {
            json evs = json::array();
            for (const EvidenceSpan& ev : qa.evidence)
                evs.push_back(json::array(
                    {ev.page_index, ev.block_id, json::array({ev.word_begin, ev.word_end})}));
            jq["evidence"] = std::move(evs);
        }
        qas.push_back(std::move(jq));
    }
    root["qas"] = std::move(qas);
    return root.dump(1);
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("cannot write dataset file: " + path);
    out << serialize_dataset(ds) << "\n";
}

}  // namespace dqa
