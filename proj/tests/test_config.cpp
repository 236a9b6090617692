#include "helpers.hpp"

#include "stoodx/config.hpp"
#include "stoodx/error.hpp"

using namespace stoodx;
using namespace stoodx::config;

TEST_CASE("scalar values") {
  const auto doc = parse(R"(
# comment
name = "blobs"   # trailing comment
k = 500
big = 1_000
alpha = 0.05
exp = 1e-3
neg = -4
flag = true
off = false
single = 'raw\n'
)");
  CHECK(doc.get_string("name") == "blobs");
  CHECK(doc.get_int("k") == 500);
  CHECK(doc.get_int("big") == 1000);
  CHECK(doc.get_double("alpha") == 0.05);
  CHECK(doc.get_double("exp") == 1e-3);
  CHECK(doc.get_int("neg") == -4);
  CHECK(doc.get_double("k") == 500.0);
  CHECK(doc.find("flag")->as_bool());
  CHECK_FALSE(doc.find("off")->as_bool());
  CHECK(doc.get_string("single") == "raw\\n");
  CHECK_FALSE(doc.get_string("missing").has_value());
}

TEST_CASE("arrays and array tables") {
  const auto doc = parse(R"(
ks = [9, 18, 36]
methods = ["stoodx", "knn"]

[[ood]]
name = "a"
[[ood]]
name = "b"
group = "near"
)");
  const auto& ks = doc.find("ks")->as_array();
  REQUIRE(ks.size() == 3);
  CHECK(ks[2].as_int() == 36);
  CHECK(doc.find("methods")->as_array()[1].as_string() == "knn");
  const auto& ood = doc.array_tables.at("ood");
  REQUIRE(ood.size() == 2);
  CHECK(ood[1].at("group").as_string() == "near");
  CHECK(doc.root.count("name") == 0);
}

TEST_CASE("errors") {
  CHECK_THROWS_AS(parse("k = "), Error);
  CHECK_THROWS_AS(parse("k 5"), Error);
  CHECK_THROWS_AS(parse("k = \"open"), Error);
  CHECK_THROWS_AS(parse("k = 1\nk = 2"), Error);
  CHECK_THROWS_AS(parse("[table]\nk = 1"), Error);
  CHECK_THROWS_AS(parse("k = [1, 2"), Error);
  CHECK_THROWS_AS(parse("k = 1 2"), Error);
  CHECK_THROWS_AS(parse("k = abc"), Error);
  CHECK_THROWS_AS(parse("k = 1.5").get_int("k"), Error);
  CHECK_THROWS_AS(parse("k = 1").get_string("k"), Error);
  CHECK_THROWS_AS(parse_file("/nonexistent/spec.toml"), Error);
}
