#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "trajta/mobility.hpp"

namespace trajta::tokenizer {

using TokenId = std::int32_t;

// Shared vocabulary: a fixed block of base tokens followed by a contiguous
// trailing block of spatial tokens <LOC_0> .. <LOC_{K-1}>. The same instance
// is shared by every city and every task fine-tune.
class Vocab {
public:
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kBos = 1;
    static constexpr TokenId kEos = 2;
    static constexpr TokenId kArrivalTimeIs = 3;
    static constexpr TokenId kLocationIs = 4;
    static constexpr TokenId kComma = 5;
    static constexpr TokenId kHash = 6;
    static constexpr TokenId kDigit0 = 7;  // '0'..'9' occupy 7..16
    static constexpr TokenId kBaseSize = 17;

    // Base tokens only (the pre-extension vocabulary).
    static Vocab base();
    // Base tokens plus n_loc spatial tokens.
    static Vocab with_locations(std::int64_t n_loc, const std::string& grid_hash = "");

    std::int64_t size() const { return kBaseSize + n_loc_; }
    std::int64_t n_locations() const { return n_loc_; }
    const std::string& grid_hash() const { return grid_hash_; }

    TokenId loc(std::int64_t cell_index) const;
    bool is_loc(TokenId t) const { return t >= kBaseSize && t < size(); }
    std::int64_t loc_cell(TokenId t) const;
    bool is_digit(TokenId t) const { return t >= kDigit0 && t < kDigit0 + 10; }
    int digit_value(TokenId t) const { return t - kDigit0; }
    TokenId digit(int v) const { return kDigit0 + v; }

    // Trajectory-relevant tokens: spatial tokens plus time digits.
    bool in_vtraj(TokenId t) const { return is_digit(t) || is_loc(t); }
    std::vector<TokenId> vtraj_ids() const;

    std::string token_text(TokenId t) const;

    std::string to_json() const;
    static Vocab from_json(const std::string& text);
    std::string hash_hex() const;

private:
    std::int64_t n_loc_ = 0;
    std::string grid_hash_;
};

// Serializes records as repeated blocks of
//   [arrival time is] [minute digits] [,] [location is] [<LOC_k>] [#]
// wrapped in BOS/EOS.
std::vector<TokenId> serialize(const std::vector<mobility::Record>& records, const Vocab& v);

struct ParseError {
    std::size_t position = 0;   // token index where parsing failed
    std::string expected;       // token class that was expected
};

struct ParseResult {
    std::vector<mobility::Record> records;  // longest well-formed prefix
    bool complete = false;                  // full BOS..EOS structure consumed
    std::optional<ParseError> error;
};

// Strict inverse of serialize on well-formed sequences.
ParseResult parse(const std::vector<TokenId>& ids, const Vocab& v);

// Grows both matrices by n_new rows; every new embedding row is the mean of
// the existing embedding rows and every new head row the mean of the
// existing head rows. The two matrices stay independent.
void mean_init_rows(Eigen::MatrixXf& embedding, Eigen::MatrixXf& head, std::int64_t n_new);

}  // namespace trajta::tokenizer
