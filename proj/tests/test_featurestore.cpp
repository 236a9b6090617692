#include "helpers.hpp"

#include <cstring>
#include <fstream>

#include "stoodx/error.hpp"
#include "stoodx/featurestore.hpp"
#include "stoodx/npy.hpp"

using namespace stoodx;
using testing::store_from;
using testing::TempDir;

namespace {

void write_file(const std::filesystem::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

std::string jsonl(std::size_t n, const std::string& extra = "") {
  std::string s;
  for (std::size_t i = 0; i < n; ++i)
    s += R"({"sample_id":"s)" + std::to_string(i) + R"(","label":)" + std::to_string(i % 2) +
         R"(,"split":"train")" + extra + "}\n";
  return s;
}

// Hand-written NPY so the reader is not only tested against its own writer.
void write_npy_f8(const std::filesystem::path& p, std::size_t rows, std::size_t cols,
                  const std::vector<double>& v) {
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': (" +
                       std::to_string(rows) + ", " + std::to_string(cols) + "), }";
  while ((10 + header.size() + 1) % 64 != 0) header += ' ';
  header += '\n';
  std::string out = "\x93NUMPY";
  out += '\x01';
  out += '\x00';
  const auto len = static_cast<std::uint16_t>(header.size());
  out += static_cast<char>(len & 0xff);
  out += static_cast<char>(len >> 8);
  out += header;
  out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  write_file(p, out);
}

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::IoError;
}

}  // namespace

TEST_CASE("load_store: 3x4 matrix with 3 records") {
  TempDir dir("fs");
  npy::save_f32(dir / "f.npy", Matrix<float>(3, 4, std::vector<float>(12, 1.0f)));
  write_file(dir / "m.jsonl", jsonl(3));
  const auto s = load_store(dir / "f.npy", dir / "m.jsonl");
  CHECK(s.size() == 3);
  CHECK(s.dim() == 4);
  CHECK(s.class_count() == 2);
  CHECK(s.record(2).index == 2);
}

TEST_CASE("load_store: shape mismatch names both counts") {
  TempDir dir("fs");
  npy::save_f32(dir / "f.npy", Matrix<float>(3, 4, std::vector<float>(12, 1.0f)));
  write_file(dir / "m.jsonl", jsonl(2));
  try {
    load_store(dir / "f.npy", dir / "m.jsonl");
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ShapeMismatch);
    const std::string msg = e.what();
    CHECK(msg.find('3') != std::string::npos);
    CHECK(msg.find('2') != std::string::npos);
  }
}

TEST_CASE("load_store: zero row reports its index") {
  TempDir dir("fs");
  std::vector<float> v(12, 1.0f);
  std::fill(v.begin() + 4, v.begin() + 8, 0.0f);
  npy::save_f32(dir / "f.npy", Matrix<float>(3, 4, v));
  write_file(dir / "m.jsonl", jsonl(3));
  try {
    load_store(dir / "f.npy", dir / "m.jsonl");
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ZeroRow);
    CHECK(std::string(e.what()).find("1") != std::string::npos);
  }
}

TEST_CASE("load_store: malformed inputs") {
  TempDir dir("fs");
  write_file(dir / "bad.npy", "not an npy file at all");
  write_file(dir / "m.jsonl", jsonl(3));
  CHECK(code_of([&] { load_store(dir / "bad.npy", dir / "m.jsonl"); }) == Errc::MalformedHeader);

  npy::save_f32(dir / "f.npy", Matrix<float>(3, 4, std::vector<float>(12, 1.0f)));
  write_file(dir / "neg.jsonl", jsonl(2) + R"({"sample_id":"x","label":-1,"split":"train"})" "\n");
  CHECK(code_of([&] { load_store(dir / "f.npy", dir / "neg.jsonl"); }) == Errc::UnknownLabel);

  write_file(dir / "nolabel.jsonl", jsonl(2) + R"({"sample_id":"x","split":"train"})" "\n");
  CHECK(code_of([&] { load_store(dir / "f.npy", dir / "nolabel.jsonl"); }) == Errc::MissingField);

  write_file(dir / "noid.jsonl", jsonl(2) + R"({"label":0,"split":"test"})" "\n");
  CHECK(code_of([&] { load_store(dir / "f.npy", dir / "noid.jsonl"); }) == Errc::MissingField);

  write_file(dir / "dup.jsonl", jsonl(2) + R"({"sample_id":"s0","label":0,"split":"test"})" "\n");
  CHECK(code_of([&] { load_store(dir / "f.npy", dir / "dup.jsonl"); }) == Errc::DuplicateSampleId);

  write_file(dir / "hdr.jsonl", R"({"_header":{"class_count":1}})" "\n" + jsonl(3));
  CHECK(code_of([&] { load_store(dir / "f.npy", dir / "hdr.jsonl"); }) == Errc::UnknownLabel);
}

TEST_CASE("declared class count overrides inference") {
  TempDir dir("fs");
  npy::save_f32(dir / "f.npy", Matrix<float>(3, 4, std::vector<float>(12, 1.0f)));
  write_file(dir / "m.jsonl", R"({"_header":{"class_count":5}})" "\n" + jsonl(3));
  CHECK(load_store(dir / "f.npy", dir / "m.jsonl").class_count() == 5);
}

TEST_CASE("float64 input is narrowed with a warning") {
  TempDir dir("fs");
  write_npy_f8(dir / "f.npy", 3, 2, {1.5, 2.0, 0.1, 4.0, -1.0, 3.25});
  write_file(dir / "m.jsonl", jsonl(3));
  ScopedWarningCapture warnings;
  const auto s = load_store(dir / "f.npy", dir / "m.jsonl");
  CHECK(warnings.count() == 1);
  CHECK(s.row(1)[0] == 0.1f);
  CHECK(s.row(2)[1] == 3.25f);
}

TEST_CASE("save/load round trip is exact") {
  TempDir dir("fs");
  auto rows = testing::random_rows(20, 7, 3);
  std::vector<int> labels(20);
  for (int i = 0; i < 20; ++i) labels[i] = i % 3;
  auto s = store_from(rows, labels);
  Matrix<float> m = s.features();
  auto recs = s.records();
  recs[4].asset = "img/4.png";
  recs[5].split = Split::test;
  recs[5].predicted = 2;
  recs[6].split = Split::ood;
  recs[6].label.reset();
  recs[6].predicted.reset();
  recs[7].validated = true;
  recs[7].validated_at = "2024-01-02T03:04:05.000Z";
  s = FeatureStore::create(m, recs);
  save_store_dir(s, dir.path());
  const auto back = load_store_dir(dir.path());
  CHECK(back.features().data == s.features().data);
  CHECK(back.records() == s.records());
  CHECK(back.fingerprint() == s.fingerprint());
}

TEST_CASE("append_samples") {
  auto base = store_from(testing::random_rows(10, 4, 1));
  const auto before = base.rows_hash(10);
  Matrix<float> extra(1, 4, {1, 2, 3, 4});
  SampleRecord r;
  r.sample_id = "new";
  r.label = 0;
  r.validated = true;
  AuditLog audit;
  const auto grown = append_samples(base, extra, {r}, &audit, "alice");
  CHECK(grown.size() == 11);
  CHECK(grown.rows_hash(10) == before);
  CHECK(std::memcmp(grown.features().data.data(), base.features().data.data(),
                    base.features().data.size() * sizeof(float)) == 0);
  CHECK(grown.record(10).validated);
  CHECK(grown.record(10).validated_at.has_value());
  REQUIRE(audit.lines().size() == 1);
  CHECK(audit.lines()[0].find("\"actor\":\"alice\"") != std::string::npos);
  CHECK(audit.lines()[0].find("\"timestamp\"") != std::string::npos);

  CHECK(code_of([&] { append_samples(base, Matrix<float>(1, 5, std::vector<float>(5, 1)), {r}); }) ==
        Errc::DimMismatch);
  r.sample_id = "r3";
  CHECK(code_of([&] { append_samples(base, extra, {r}); }) == Errc::DuplicateSampleId);
  r.sample_id = "other";
  r.validated = false;
  CHECK(code_of([&] { append_samples(base, extra, {r}); }) == Errc::InvalidArgument);
}

TEST_CASE("audit log appends to disk") {
  TempDir dir("fs");
  {
    AuditLog log(dir / "audit.jsonl");
    log.record("accept", "a", "bob");
  }
  AuditLog again(dir / "audit.jsonl");
  again.record("reject", "b", "carol");
  std::ifstream in(dir / "audit.jsonl");
  std::string l1, l2;
  std::getline(in, l1);
  std::getline(in, l2);
  CHECK(l1.find("\"accept\"") != std::string::npos);
  CHECK(l2.find("\"carol\"") != std::string::npos);
}

TEST_CASE("rank_features examples") {
  auto two = store_from({{1.0f, 2.0f}, {1.0f, 2.0f}});
  CHECK(rank_features(two, RankingScope::global).order == std::vector<std::size_t>{1, 0});

  auto same = store_from({{1, 1, 1, 1}, {2, 2, 2, 2}});
  CHECK(rank_features(same, RankingScope::global).order == std::vector<std::size_t>{0, 1, 2, 3});

  auto cls = store_from({{5, 0.1f, 0.1f, 0.2f}, {5, 0.1f, 0.1f, 0.2f}, {1, 1, 1, 3}, {1, 1, 1, 4}},
                        {0, 0, 1, 1});
  CHECK(rank_features(cls, RankingScope::per_class, 1).order[0] == 3);
  CHECK(rank_features(cls, RankingScope::global).order[0] == 0);
  CHECK(code_of([&] { rank_features(cls, RankingScope::per_class, 7); }) == Errc::EmptyScope);
}

TEST_CASE("rank_features ignores non-train rows and uses magnitudes") {
  auto s = store_from({{-3, 1}, {1, 1}});
  CHECK(rank_features(s, RankingScope::global).order[0] == 0);
  auto recs = s.records();
  recs[0].split = Split::test;
  auto t = FeatureStore::create(s.features(), recs);
  CHECK(rank_features(t, RankingScope::global).order == std::vector<std::size_t>{0, 1});
}

TEST_CASE("rank_features is permutation covariant and row-order invariant") {
  const auto rows = testing::random_rows(30, 9, 17);
  const auto s = store_from(rows);
  const auto base = rank_features(s, RankingScope::global);

  std::vector<std::size_t> perm{4, 2, 8, 0, 7, 1, 3, 6, 5};
  std::vector<std::vector<float>> permuted(rows.size(), std::vector<float>(9));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < 9; ++j) permuted[i][j] = rows[i][perm[j]];
  const auto pr = rank_features(store_from(permuted), RankingScope::global);
  for (std::size_t j = 0; j < 9; ++j) CHECK(perm[pr.order[j]] == base.order[j]);

  auto reversed = rows;
  std::reverse(reversed.begin(), reversed.end());
  CHECK(rank_features(store_from(reversed), RankingScope::global).order == base.order);
}

TEST_CASE("top_dimensions uses the ceiling and sorts") {
  const auto s = store_from({{1, 8, 2, 7, 3, 6, 4, 5}});
  const auto r = rank_features(s, RankingScope::global);
  CHECK(top_dimensions(r, 0.25) == std::vector<std::size_t>{1, 3});
  CHECK(top_dimensions(r, 0.3).size() == 3);
  CHECK(top_dimensions(r, 1.0).size() == 8);
  CHECK(top_dimensions(r, 0.125) == std::vector<std::size_t>{1});
}

TEST_CASE("select_rows retags split") {
  const auto s = store_from(testing::random_rows(6, 3, 2));
  const std::vector<std::size_t> rows{4, 1};
  const auto sub = select_rows(s, rows, Split::test);
  CHECK(sub.size() == 2);
  CHECK(sub.record(0).sample_id == "r4");
  CHECK(sub.record(1).split == Split::test);
  CHECK(sub.row(0)[2] == s.row(4)[2]);
}
