#include "doctest_torch.hpp"

#include <filesystem>
#include <fstream>

#include "hvsmark/errors.hpp"
#include "hvsmark/watermark.hpp"

using namespace hvsmark;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("hvsmark_wm_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ImageTensor flip_fraction(const ImageTensor& w, double fraction, uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto mask = torch::rand(w.data().sizes(), gen, torch::kFloat64) < fraction;
  return ImageTensor(torch::where(mask, -w.data(), w.data()), ValueRange::Signed);
}

}  // namespace

TEST_CASE("logo is binary with a plausible amount of ink") {
  for (auto text : {"ACM", "IEEE"}) {
    auto logo = generate_logo(text, 64, 64);
    auto d = logo.data();
    CHECK(logo.range() == ValueRange::Signed);
    CHECK(d.abs().eq(1.0).all().item<bool>());
    const double fg = d.gt(0).to(torch::kFloat64).mean().item<double>();
    CHECK(fg > 0.05);
    CHECK(fg < 0.60);
    CHECK(torch::equal(d[0], d[2]));
  }
  CHECK(torch::equal(generate_logo("ACM", 32, 48).data(), generate_logo("ACM", 32, 48).data()));
  CHECK_FALSE(torch::equal(generate_logo("ACM", 64, 64).data(), generate_logo("IEEE", 64, 64).data()));
  CHECK(generate_logo("ACM", 16, 16, 1).channels() == 1);
}

TEST_CASE("logo errors") {
  CHECK_THROWS_AS(generate_logo("", 64, 64), InvalidArgument);
  CHECK_THROWS_AS(generate_logo("a\tb", 64, 64), InvalidArgument);
  CHECK_THROWS_AS(generate_logo("   ", 64, 64), InvalidArgument);
  CHECK_THROWS_AS(generate_logo("ACM", 4, 64), InvalidShape);
}

TEST_CASE("logo from image") {
  auto src = torch::zeros({3, 20, 20}, torch::kFloat64);
  src.slice(2, 10).fill_(1.0);
  auto w = logo_from_image(ImageTensor(src, ValueRange::Unit), 10, 10);
  CHECK(w.data()[0][3][2].item<double>() == -1.0);
  CHECK(w.data()[0][3][7].item<double>() == 1.0);
}

TEST_CASE("null-response noise statistics") {
  auto a = generate_wz(1, 256, 256);
  auto b = generate_wz(2, 256, 256);
  CHECK(torch::equal(a.data(), generate_wz(1, 256, 256).data()));
  CHECK(std::abs((a.data() - b.data()).abs().mean().item<double>() - 2.0 / 3.0) <= 0.02);
  CHECK(std::abs(a.data().mean().item<double>()) <= 0.01);
  CHECK(a.data().abs().max().item<double>() < 1.0);
  CHECK(a.data().ne(0).all().item<bool>());
}

TEST_CASE("verification decisions") {
  auto wm = make_watermark_set(64, 64, 1234);
  SUBCASE("exact copies") {
    auto v = verify(wm.w1, wm.w2, wm);
    CHECK(v.decision == Decision::MarkedW1);
    CHECK(v.ber_w1 == 0.0);
    CHECK(v.ber_w2 == 0.0);
  }
  SUBCASE("only the second carrier marked") {
    auto v = verify(wm.wz, wm.w2, wm);
    CHECK(v.decision == Decision::MarkedW2);
  }
  SUBCASE("null response") {
    auto v = verify(wm.wz, wm.wz, wm);
    CHECK(v.decision == Decision::Unmarked);
    CHECK(v.dist_wz == 0.0);
    CHECK(v.ber_w1 > 0.3);
  }
  SUBCASE("five percent of flipped bits") {
    auto v = verify(flip_fraction(wm.w1, 0.05, 1), flip_fraction(wm.w2, 0.05, 2), wm);
    CHECK(v.decision != Decision::Unmarked);
    CHECK(v.ber_w1 == doctest::Approx(0.05).epsilon(0.3));
    CHECK(v.ber_w1 > 0.0);
  }
  SUBCASE("shape mismatch") {
    auto other = make_watermark_set(32, 32, 1);
    CHECK_THROWS_AS(verify(other.w1, other.w2, wm), InvalidShape);
  }
  CHECK(to_json(verify(wm.w1, wm.w2, wm))["decision"] == "marked_w1");
}

TEST_CASE("stricter tau never marks more") {
  auto wm = make_watermark_set(32, 32, 5);
  std::vector<double> taus{0.0, 0.02, 0.05, 0.1, 0.2, 0.5};
  for (double frac : {0.0, 0.03, 0.08, 0.15, 0.3}) {
    auto e1 = flip_fraction(wm.w1, frac, 7);
    auto e2 = flip_fraction(wm.w2, frac, 8);
    bool marked_before = false;
    for (double tau : taus) {
      const bool marked = verify(e1, e2, wm, tau).decision != Decision::Unmarked;
      CHECK((!marked_before || marked));
      marked_before = marked;
    }
  }
}

TEST_CASE("watermark assets roundtrip with hashes") {
  auto wm = make_watermark_set(32, 32, 77, "HVS", "DCT");
  auto dir = scratch("roundtrip");
  save_watermarks(wm, dir);
  CHECK(fs::exists(dir / "w1.png"));
  auto back = load_watermarks(dir);
  CHECK(back.w1_hash == wm.w1_hash);
  CHECK(back.wz_hash == wm.wz_hash);
  CHECK(back.wz_seed == 77);
  CHECK(torch::equal(back.wz.data(), wm.wz.data()));

  // flip the lowest mantissa byte of the first sample
  {
    std::fstream f(dir / "wz.hvr", std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(24);
    const char c = static_cast<char>(f.get());
    f.seekp(24);
    f.put(static_cast<char>(c ^ 0x01));
  }
  CHECK_THROWS_AS(load_watermarks(dir), DataError);
  CHECK_THROWS_AS(load_watermarks(dir / "missing"), DataError);
}
