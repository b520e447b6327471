#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "btcnn/dataset.hpp"
#include "btcnn/pgm.hpp"
#include "test_util.hpp"

using namespace btcnn;
using testutil::TempDir;

namespace {

constexpr ClassCounts kMriCounts = {1426, 708, 930};

std::vector<unsigned char> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorCode::IoError;
}

// One 2x2 image and mask shared by every row of the generated index.
void write_shared_files(const TempDir& dir) {
    pgm::write(dir / "img.pgm", Grid<std::uint16_t>(2, 2, 100), 65535);
    pgm::write(dir / "mask.pgm", Grid<std::uint16_t>(2, 2, 255), 255);
}

void write_index_rows(const TempDir& dir, const std::vector<std::string>& rows) {
    std::ostringstream os;
    os << kIndexHeader << '\n';
    for (const auto& r : rows) os << r << '\n';
    testutil::write_file(dir / "index.csv", os.str());
}

} // namespace

TEST(LoadManifest, MriDatasetCounts) {
    TempDir dir;
    write_shared_files(dir);
    std::vector<std::string> rows;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t k = 0; k < kMriCounts[c]; ++k)
            rows.push_back("rec" + std::to_string(rows.size()) + ",p" + std::to_string(k) + "," +
                           std::string(kLabelNames[c]) + ",img.pgm,mask.pgm");
    write_index_rows(dir, rows);
    const auto m = load_manifest(dir.path());
    EXPECT_EQ(m.size(), 3064u);
    EXPECT_EQ(class_counts(m), kMriCounts);
    EXPECT_EQ(m.entries.front().record_id, "rec0");
    EXPECT_EQ(m.entries.back().record_id, "rec3063");
}

TEST(LoadManifest, HeaderOnlyIsEmpty) {
    TempDir dir;
    write_index_rows(dir, {});
    EXPECT_EQ(code_of([&] { load_manifest(dir.path()); }), ErrorCode::EmptyManifest);
}

TEST(LoadManifest, UnknownLabelNamesRow) {
    TempDir dir;
    write_shared_files(dir);
    std::vector<std::string> rows;
    for (int i = 1; i <= 8; ++i)
        rows.push_back("r" + std::to_string(i) + ",p1," + (i == 7 ? "astrocytoma" : "glioma") + ",img.pgm,mask.pgm");
    write_index_rows(dir, rows);
    try {
        load_manifest(dir.path());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::UnknownLabel);
        EXPECT_NE(std::string(e.what()).find("row 7"), std::string::npos) << e.what();
    }
}

TEST(LoadManifest, OtherValidationErrors) {
    TempDir dir;
    EXPECT_EQ(code_of([&] { load_manifest(dir.path()); }), ErrorCode::MissingIndex);
    write_shared_files(dir);
    write_index_rows(dir, {"a,p,glioma,img.pgm,mask.pgm", "a,p,pituitary,img.pgm,mask.pgm"});
    EXPECT_EQ(code_of([&] { load_manifest(dir.path()); }), ErrorCode::DuplicateRecordId);
    write_index_rows(dir, {"a,p,glioma,img.pgm,nowhere.pgm"});
    EXPECT_EQ(code_of([&] { load_manifest(dir.path()); }), ErrorCode::MissingFile);
    testutil::write_file(dir / "index.csv", "id,label\nx,glioma\n");
    EXPECT_EQ(code_of([&] { load_manifest(dir.path()); }), ErrorCode::MalformedIndex);
}

TEST(Pgm, HandBuiltSixteenBitSamplesAreBigEndian) {
    std::string raw = "P5\n4 4\n65535\n";
    std::string body(32, '\0');
    body[0] = '\x01';
    body[1] = '\x02';
    body[31] = '\xFF';
    const auto r = pgm::decode(bytes_of(raw + body));
    EXPECT_EQ(r.pixels.rows, 4u);
    EXPECT_EQ(r.pixels.cols, 4u);
    EXPECT_EQ(r.maxval, 65535u);
    EXPECT_EQ(r.pixels(0, 0), 258);
    EXPECT_EQ(r.pixels(3, 3), 255);
}

TEST(Pgm, HeaderCommentsAndMalformedInput) {
    const auto r = pgm::decode(bytes_of(std::string("P5 # comment\n2 1\n# another\n255\n") + "\x07\x09"));
    EXPECT_EQ(r.pixels(0, 0), 7);
    EXPECT_EQ(r.pixels(0, 1), 9);
    EXPECT_EQ(code_of([] { pgm::decode(bytes_of("P2\n1 1\n255\n0")); }), ErrorCode::MalformedPgm);
    EXPECT_EQ(code_of([] { pgm::decode(bytes_of("P5\n2 2\n65535\n\x01\x02")); }), ErrorCode::MalformedPgm);
    EXPECT_EQ(code_of([] { pgm::decode(bytes_of("P5\n0 2\n255\n")); }), ErrorCode::MalformedPgm);
}

TEST(LoadRecord, ReadsImageAndMask) {
    TempDir dir;
    pgm::write(dir / "img.pgm", Grid<std::uint16_t>(2, 3, {0, 1, 65535, 300, 4, 5}), 65535);
    pgm::write(dir / "mask.pgm", Grid<std::uint16_t>(2, 3, {0, 255, 0, 0, 255, 255}), 255);
    const Manifest m{dir.path(), {{"a", "p", Label::Meningioma, "img.pgm", "mask.pgm"}}};
    const auto r = load_record(m, m.entries[0]);
    EXPECT_EQ(r.image.values, (std::vector<std::uint16_t>{0, 1, 65535, 300, 4, 5}));
    EXPECT_EQ(r.mask.values, (std::vector<std::uint8_t>{0, 1, 0, 0, 1, 1}));
    EXPECT_EQ(r.label, Label::Meningioma);
}

TEST(LoadRecord, DimensionMismatchAndInvalidMask) {
    TempDir dir;
    pgm::write(dir / "img5.pgm", Grid<std::uint16_t>(5, 5, 1), 65535);
    pgm::write(dir / "mask4.pgm", Grid<std::uint16_t>(4, 4, 0), 255);
    Grid<std::uint16_t> bad(5, 5, 0);
    bad(2, 2) = 7;
    pgm::write(dir / "mask7.pgm", bad, 255);
    const Manifest m{dir.path(),
                     {{"a", "p", Label::Glioma, "img5.pgm", "mask4.pgm"}, {"b", "p", Label::Glioma, "img5.pgm", "mask7.pgm"}}};
    EXPECT_EQ(code_of([&] { load_record(m, m.entries[0]); }), ErrorCode::DimensionMismatch);
    EXPECT_EQ(code_of([&] { load_record(m, m.entries[1]); }), ErrorCode::InvalidMask);
}

TEST(LoadRecord, WriteThenLoadRoundTripsRandomImages) {
    TempDir dir;
    Xorshift64Star rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const auto rows = 1 + rng.below(17), cols = 1 + rng.below(17);
        DatasetRecord rec{"r", "p", Label::Pituitary, ImageU16(rows, cols), Mask(rows, cols)};
        for (auto& v : rec.image.values) v = static_cast<std::uint16_t>(rng.below(65536));
        for (auto& v : rec.mask.values) v = static_cast<std::uint8_t>(rng.below(2));
        const ManifestEntry e{"r", "p", Label::Pituitary, "i.pgm", "m.pgm"};
        write_record(dir.path(), e, rec);
        const auto back = load_record(Manifest{dir.path(), {e}}, e);
        EXPECT_EQ(back.image, rec.image);
        EXPECT_EQ(back.mask, rec.mask);
    }
}

TEST(StratifiedSplit, MriCountsFloorRule) {
    const auto m = testutil::manifest_with_counts(1426, 708, 930);
    const auto s = stratified_split(m, SplitRatios{}, 42);
    EXPECT_EQ(class_counts(m, s, Partition::Train), (ClassCounts{1000, 496, 652}));
    EXPECT_EQ(class_counts(m, s, Partition::Validation), (ClassCounts{213, 106, 139}));
    EXPECT_EQ(class_counts(m, s, Partition::Test), (ClassCounts{213, 106, 139}));
    EXPECT_EQ(s.indices(Partition::Train).size(), 2148u);
    EXPECT_EQ(s.indices(Partition::Validation).size(), 458u);
    EXPECT_EQ(s.indices(Partition::Test).size(), 458u);
}

TEST(StratifiedSplit, TenRecordsOfOneClass) {
    const auto s = stratified_split(testutil::manifest_with_counts(0, 10, 0), SplitRatios{}, 1);
    EXPECT_EQ(s.indices(Partition::Train).size(), 8u);
    EXPECT_EQ(s.indices(Partition::Validation).size(), 1u);
    EXPECT_EQ(s.indices(Partition::Test).size(), 1u);
}

TEST(StratifiedSplit, SeedDeterminism) {
    const auto m = testutil::manifest_with_counts(40, 40, 40);
    const auto a = stratified_split(m, SplitRatios{}, 5);
    EXPECT_EQ(a.partition, stratified_split(m, SplitRatios{}, 5).partition);
    std::set<std::vector<Partition>> distinct;
    for (std::uint64_t seed = 0; seed < 10; ++seed) distinct.insert(stratified_split(m, SplitRatios{}, seed).partition);
    EXPECT_EQ(distinct.size(), 10u);
}

TEST(StratifiedSplit, PartitionsAreDisjointExhaustiveAndFloorSized) {
    Xorshift64Star rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n[3] = {rng.below(60), rng.below(60), 1 + rng.below(60)};
        const auto m = testutil::manifest_with_counts(n[0], n[1], n[2]);
        const auto s = stratified_split(m, SplitRatios{}, rng.next());
        ASSERT_EQ(s.partition.size(), m.size());
        std::size_t total = 0;
        for (auto p : {Partition::Train, Partition::Validation, Partition::Test}) total += s.indices(p).size();
        EXPECT_EQ(total, m.size());
        const auto val = class_counts(m, s, Partition::Validation), test = class_counts(m, s, Partition::Test),
                   train = class_counts(m, s, Partition::Train);
        for (std::size_t c = 0; c < 3; ++c) {
            const std::size_t expected = n[c] * 15 / 100; // exact floor(0.15 n) in integers
            EXPECT_EQ(val[c], expected);
            EXPECT_EQ(test[c], expected);
            EXPECT_EQ(train[c], n[c] - 2 * expected);
        }
    }
}

TEST(StratifiedSplit, Errors) {
    EXPECT_EQ(code_of([] { stratified_split(Manifest{}, SplitRatios{}, 0); }), ErrorCode::EmptyManifest);
    EXPECT_EQ(code_of([] { stratified_split(testutil::manifest_with_counts(3, 3, 3), SplitRatios{0.5, 0.3, 0.3}, 0); }),
              ErrorCode::BadRatios);
}

TEST(ClassCounts, EmptyPartition) {
    const auto m = testutil::manifest_with_counts(1, 1, 1);
    const auto s = stratified_split(m, SplitRatios{}, 3);
    EXPECT_EQ(class_counts(m, s, Partition::Test), (ClassCounts{0, 0, 0}));
    EXPECT_EQ(class_counts(m, s, Partition::Train), (ClassCounts{1, 1, 1}));
}
