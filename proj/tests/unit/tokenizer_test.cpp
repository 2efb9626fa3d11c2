#include <doctest.h>

#include "trajta/common.hpp"
#include "trajta/tokenizer.hpp"

using namespace trajta::tokenizer;
using trajta::mobility::Record;

TEST_CASE("vocab layout") {
    const Vocab v = Vocab::with_locations(441, "gridhash");
    CHECK(v.size() == Vocab::kBaseSize + 441);
    CHECK(v.loc(0) == Vocab::kBaseSize);
    CHECK(v.loc(440) == v.size() - 1);
    CHECK(v.is_loc(v.loc(12)));
    CHECK(v.loc_cell(v.loc(12)) == 12);
    CHECK(v.token_text(v.loc(12)) == "<LOC_12>");
    CHECK(v.is_digit(v.digit(7)));
    CHECK_FALSE(v.in_vtraj(Vocab::kComma));
    CHECK(v.in_vtraj(v.digit(0)));
    CHECK(v.in_vtraj(v.loc(3)));
    CHECK_THROWS(v.loc(441));

    const Vocab back = Vocab::from_json(v.to_json());
    CHECK(back.size() == v.size());
    CHECK(back.hash_hex() == v.hash_hex());
    CHECK(back.grid_hash() == "gridhash");
}

TEST_CASE("serialize follows the record template") {
    const Vocab v = Vocab::with_locations(64);
    const auto ids = serialize({{12, 540}}, v);
    const std::vector<TokenId> expect = {
        Vocab::kBos,  Vocab::kArrivalTimeIs, v.digit(5),   v.digit(4), v.digit(0),
        Vocab::kComma, Vocab::kLocationIs,   v.loc(12),    Vocab::kHash, Vocab::kEos};
    CHECK(ids == expect);

    // minute 0 renders as a single unpadded digit
    const auto zero = serialize({{1, 0}}, v);
    CHECK(zero[2] == v.digit(0));
    CHECK(zero[3] == Vocab::kComma);

    // two records: 2 blocks of (5 fixed tokens + digits) plus BOS/EOS
    const auto two = serialize({{1, 5}, {2, 23}}, v);
    CHECK(two.size() == 2 + (5 + 1) + (5 + 2));

    CHECK_THROWS(serialize({{64, 10}}, v));   // cell outside the vocabulary
    CHECK_THROWS(serialize({{0, 1440}}, v));  // minute out of range
}

TEST_CASE("parse is the strict inverse of serialize") {
    const Vocab v = Vocab::with_locations(100);
    trajta::Rng rng(5);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<Record> records;
        const std::size_t n = 1 + rng.uniform_int(12);
        std::int32_t minute = static_cast<std::int32_t>(rng.uniform_int(300));
        for (std::size_t i = 0; i < n; ++i) {
            minute = std::min<std::int32_t>(1439,
                                            minute + static_cast<std::int32_t>(rng.uniform_int(40)));
            records.push_back({static_cast<std::int32_t>(rng.uniform_int(100)), minute});
        }
        const auto ids = serialize(records, v);
        const ParseResult res = parse(ids, v);
        CHECK(res.complete);
        CHECK_FALSE(res.error.has_value());
        CHECK(res.records == records);
    }
}

TEST_CASE("parse reports structured errors") {
    const Vocab v = Vocab::with_locations(64);
    auto ids = serialize({{3, 100}, {4, 200}}, v);

    // truncate in the middle of the second record
    std::vector<TokenId> cut(ids.begin(), ids.begin() + 12);
    const ParseResult res = parse(cut, v);
    CHECK_FALSE(res.complete);
    REQUIRE(res.error.has_value());
    CHECK(res.records.size() == 1);  // longest well-formed prefix
    CHECK(res.error->position <= cut.size());

    // minute 1440 is out of range
    std::vector<TokenId> bad = {Vocab::kBos,        Vocab::kArrivalTimeIs,
                                v.digit(1),         v.digit(4),
                                v.digit(4),         v.digit(0),
                                Vocab::kComma,      Vocab::kLocationIs,
                                v.loc(3),           Vocab::kHash,
                                Vocab::kEos};
    const ParseResult res2 = parse(bad, v);
    CHECK_FALSE(res2.complete);
    REQUIRE(res2.error.has_value());
    CHECK(res2.error->expected == "minute in [0, 1439]");

    // missing '#'
    std::vector<TokenId> nohash = {Vocab::kBos,   Vocab::kArrivalTimeIs, v.digit(5),
                                   Vocab::kComma, Vocab::kLocationIs,    v.loc(3),
                                   Vocab::kEos};
    const ParseResult res3 = parse(nohash, v);
    REQUIRE(res3.error.has_value());
    CHECK(res3.error->expected == "'#'");
}

TEST_CASE("serialization is city-agnostic") {
    const Vocab v = Vocab::with_locations(50, "city-a-grid");
    const Vocab w = Vocab::with_locations(50, "city-b-grid");
    const std::vector<Record> records = {{7, 30}, {8, 45}};
    CHECK(serialize(records, v) == serialize(records, w));
}

TEST_CASE("mean_init_rows") {
    Eigen::MatrixXf emb(2, 3), head(2, 3);
    emb << 1, 0, 2, 0, 1, 2;
    head << 4, 4, 4, 2, 2, 2;
    mean_init_rows(emb, head, 2);
    REQUIRE(emb.rows() == 4);
    REQUIRE(head.rows() == 4);
    CHECK(emb(2, 0) == doctest::Approx(0.5));
    CHECK(emb(2, 1) == doctest::Approx(0.5));
    CHECK(emb(3, 2) == doctest::Approx(2.0));
    CHECK(head(2, 0) == doctest::Approx(3.0));
    // embedding and head stay independent
    CHECK(head(2, 0) != emb(2, 0));

    // identical pretrained rows: every new row equals them
    Eigen::MatrixXf e2 = Eigen::MatrixXf::Constant(3, 2, 7.0f);
    Eigen::MatrixXf h2 = Eigen::MatrixXf::Constant(3, 2, 9.0f);
    mean_init_rows(e2, h2, 1);
    CHECK(e2(3, 0) == doctest::Approx(7.0));
    CHECK(h2(3, 1) == doctest::Approx(9.0));

    // n_new = 0 leaves matrices unchanged
    Eigen::MatrixXf e3 = e2, h3 = h2;
    mean_init_rows(e3, h3, 0);
    CHECK(e3 == e2);

    // determinism: extending twice gives bit-identical rows
    Eigen::MatrixXf ea = emb, ha = head, eb = emb, hb = head;
    mean_init_rows(ea, ha, 3);
    mean_init_rows(eb, hb, 3);
    CHECK(ea == eb);
    CHECK(ha == hb);
}
