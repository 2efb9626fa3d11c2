#include "trajta/tokenizer.hpp"

#include <stdexcept>

#include <nlohmann/json.hpp>

#include "trajta/common.hpp"

namespace trajta::tokenizer {

Vocab Vocab::base() { return Vocab{}; }

Vocab Vocab::with_locations(std::int64_t n_loc, const std::string& grid_hash) {
    if (n_loc < 0) throw std::invalid_argument("Vocab: n_loc must be >= 0");
    Vocab v;
    v.n_loc_ = n_loc;
    v.grid_hash_ = grid_hash;
    return v;
}

TokenId Vocab::loc(std::int64_t cell_index) const {
    if (cell_index < 0 || cell_index >= n_loc_)
        throw std::out_of_range("Vocab: cell index " + std::to_string(cell_index) +
                                " outside the " + std::to_string(n_loc_) +
                                "-token spatial block (grid larger than vocabulary)");
    return static_cast<TokenId>(kBaseSize + cell_index);
}

std::int64_t Vocab::loc_cell(TokenId t) const {
    if (!is_loc(t)) throw std::out_of_range("Vocab: not a spatial token");
    return t - kBaseSize;
}

std::vector<TokenId> Vocab::vtraj_ids() const {
    std::vector<TokenId> out;
    for (int d = 0; d < 10; ++d) out.push_back(kDigit0 + d);
    for (std::int64_t k = 0; k < n_loc_; ++k) out.push_back(static_cast<TokenId>(kBaseSize + k));
    return out;
}

std::string Vocab::token_text(TokenId t) const {
    switch (t) {
        case kPad: return "<PAD>";
        case kBos: return "<BOS>";
        case kEos: return "<EOS>";
        case kArrivalTimeIs: return "arrival time is";
        case kLocationIs: return "location is";
        case kComma: return ",";
        case kHash: return "#";
        default: break;
    }
    if (is_digit(t)) return std::string(1, static_cast<char>('0' + digit_value(t)));
    if (is_loc(t)) return "<LOC_" + std::to_string(loc_cell(t)) + ">";
    throw std::out_of_range("Vocab: unknown token id " + std::to_string(t));
}

std::string Vocab::to_json() const {
    nlohmann::json j;
    auto& toks = j["tokens"] = nlohmann::json::array();
    for (TokenId t = 0; t < size(); ++t) toks.push_back(token_text(t));
    j["n_locations"] = n_loc_;
    j["grid_hash"] = grid_hash_;
    return j.dump();
}

Vocab Vocab::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    Vocab v = with_locations(j.at("n_locations").get<std::int64_t>(),
                             j.value("grid_hash", std::string{}));
    const auto& toks = j.at("tokens");
    if (static_cast<std::int64_t>(toks.size()) != v.size())
        throw std::runtime_error("Vocab: token list does not match n_locations");
    for (TokenId t = 0; t < v.size(); ++t)
        if (toks.at(static_cast<std::size_t>(t)).get<std::string>() != v.token_text(t))
            throw std::runtime_error("Vocab: unexpected token at id " + std::to_string(t));
    return v;
}

std::string Vocab::hash_hex() const { return content_hash_hex(to_json()); }

std::vector<TokenId> serialize(const std::vector<mobility::Record>& records, const Vocab& v) {
    std::vector<TokenId> out;
    out.reserve(2 + records.size() * 9);
    out.push_back(Vocab::kBos);
    for (const auto& r : records) {
        if (r.minute < 0 || r.minute > 1439)
            throw std::invalid_argument("serialize: minute out of [0, 1439]");
        out.push_back(Vocab::kArrivalTimeIs);
        const std::string digits = std::to_string(r.minute);
        for (char d : digits) out.push_back(v.digit(d - '0'));
        out.push_back(Vocab::kComma);
        out.push_back(Vocab::kLocationIs);
        out.push_back(v.loc(r.cell));
        out.push_back(Vocab::kHash);
    }
    out.push_back(Vocab::kEos);
    return out;
}

ParseResult parse(const std::vector<TokenId>& ids, const Vocab& v) {
    ParseResult res;
    std::size_t i = 0;
    auto fail = [&](const std::string& expected) {
        res.error = ParseError{i, expected};
        return res;
    };
    auto at = [&]() -> TokenId { return ids[i]; };
    auto done = [&]() { return i >= ids.size(); };

    if (done() || at() != Vocab::kBos) return fail("BOS");
    ++i;
    while (true) {
        if (done()) return fail("EOS or 'arrival time is'");
        if (at() == Vocab::kEos) {
            ++i;
            res.complete = true;
            if (i != ids.size()) return fail("end of sequence after EOS");
            return res;
        }
        if (at() != Vocab::kArrivalTimeIs) return fail("'arrival time is'");
        ++i;
        long minute = 0;
        int n_digits = 0;
        while (!done() && v.is_digit(at())) {
            minute = minute * 10 + v.digit_value(at());
            ++n_digits;
            ++i;
            if (n_digits > 4) return fail("at most 4 minute digits");
        }
        if (n_digits == 0) return fail("minute digit");
        if (minute > 1439) return fail("minute in [0, 1439]");
        if (done() || at() != Vocab::kComma) return fail("','");
        ++i;
        if (done() || at() != Vocab::kLocationIs) return fail("'location is'");
        ++i;
        if (done() || !v.is_loc(at())) return fail("spatial token");
        const std::int64_t cell = v.loc_cell(at());
        ++i;
        if (done() || at() != Vocab::kHash) return fail("'#'");
        ++i;
        res.records.push_back({static_cast<std::int32_t>(cell),
                               static_cast<std::int32_t>(minute)});
    }
}

void mean_init_rows(Eigen::MatrixXf& embedding, Eigen::MatrixXf& head, std::int64_t n_new) {
    if (embedding.rows() == 0 || head.rows() == 0)
        throw std::invalid_argument("mean_init_rows: matrices must be nonempty");
    if (n_new < 0) throw std::invalid_argument("mean_init_rows: n_new must be >= 0");
    if (n_new == 0) return;
    auto extend = [&](Eigen::MatrixXf& m) {
        const Eigen::Index old_rows = m.rows();
        // Sum in double, in fixed row order, so extension is bit-stable.
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(m.cols());
        for (Eigen::Index r = 0; r < old_rows; ++r) mean += m.row(r).cast<double>();
        mean /= static_cast<double>(old_rows);
        const Eigen::RowVectorXf mean_f = mean.cast<float>().transpose();
        m.conservativeResize(old_rows + n_new, Eigen::NoChange);
        for (Eigen::Index r = 0; r < n_new; ++r) m.row(old_rows + r) = mean_f;
    };
    extend(embedding);
    extend(head);
}

}  // namespace trajta::tokenizer
