#pragma once

#include <stdexcept>
#include <string>

namespace dqa {

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// dataset / schema
struct malformed_input : error {
    using error::error;
};
struct dangling_reference : error {
    using error::error;
};

// preprocessing
struct budget_too_small : error {
    using error::error;
};
struct image_decode_error : error {
    using error::error;
};

// encoder
struct sequence_too_long : error {
    using error::error;
};
struct vocabulary_overflow : error {
    using error::error;
};

// heads
struct no_valid_span : error {
    using error::error;
};

// expression trees
struct parse_error : error {
    parse_error(const std::string& msg, size_t position)
        : error(msg + " (at position " + std::to_string(position) + ")"), pos(position) {}
    size_t pos;
};
struct division_by_zero : error {
    using error::error;
};
struct incomplete_preorder : error {
    using error::error;
};
struct trailing_tokens : error {
    using error::error;
};

// training
struct unlocatable_answer : error {
    using error::error;
};
struct unalignable_leaf : error {
    using error::error;
};
struct no_trainable_examples : error {
    using error::error;
};

// evaluation / cli
struct unknown_uid : error {
    using error::error;
};
struct config_error : error {
    using error::error;
};

}  // namespace dqa
