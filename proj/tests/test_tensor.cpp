#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "test_util.hpp"
#include "uqtf/tensor.hpp"
#include "uqtf/tensor_io.hpp"

using namespace uqtf;

TEST_CASE("tensor: shape invariants") {
    CHECK_THROWS_AS(Tensor<float>({0, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor<float>({2, -1}), ShapeError);
    CHECK_THROWS_AS(Tensor<float>(Shape{}), ShapeError);
    CHECK_THROWS_AS(Tensor<float>({2, 2}, {1.f, 2.f, 3.f}), ShapeError);
    Tensor<float> t({2, 3});
    CHECK(t.numel() == 6);
    CHECK_THROWS_AS(t.reshape({4, 2}), ShapeError);
    CHECK_THROWS_AS(t.item(), ShapeError);
}

TEST_CASE("tensor: reshape round trip is bitwise identity") {
    for (uint64_t seed = 0; seed < 25; ++seed) {
        auto t = testutil::random_tensor<double>({3, 4, 5}, seed);
        auto back = t.reshape({60}).reshape({5, 12}).reshape({3, 4, 5});
        for (int64_t i = 0; i < t.numel(); ++i) CHECK(t.at(i) == back.at(i));
    }
}

TEST_CASE("tensor: clone detaches storage") {
    Tensor<float> a({2, 2}, {1, 2, 3, 4});
    Tensor<float> b = a.clone();
    b.at(0) = 99;
    CHECK(a.at(0) == 1);
    Tensor<float> view = a.reshape({4});
    view.at(1) = 42;  // reshape shares storage
    CHECK(a.at(1) == 42);
}

TEST_CASE("tensor: finite check") {
    Tensor<double> t({2}, {1.0, std::nan("")});
    CHECK_FALSE(t.all_finite());
    CHECK_THROWS_AS(check_finite(t, "test"), NumericError);
}

TEST_CASE("tensor io: container round trip") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "uqtf_io_test";
    fs::create_directories(dir);

    SUBCASE("f64 round trip is bitwise") {
        auto t = testutil::random_tensor<double>({2, 3, 4}, 7);
        const auto path = (dir / "a.uqtf").string();
        io::save_tensor(path, t);
        auto back = io::load_tensor<double>(path);
        REQUIRE(back.shape() == t.shape());
        for (int64_t i = 0; i < t.numel(); ++i) CHECK(back.at(i) == t.at(i));
    }

    SUBCASE("f32 payload loads into f64 tensors") {
        auto t = testutil::random_tensor<float>({5, 2}, 9);
        const auto path = (dir / "b.uqtf").string();
        io::save_tensor(path, t);
        auto back = io::load_tensor<double>(path);
        REQUIRE(back.shape() == t.shape());
        for (int64_t i = 0; i < t.numel(); ++i)
            CHECK(back.at(i) == static_cast<double>(t.at(i)));
    }

    SUBCASE("corrupt magic rejected") {
        const auto path = (dir / "c.uqtf").string();
        std::FILE* f = std::fopen(path.c_str(), "wb");
        std::fputs("NOPE", f);
        std::fclose(f);
        CHECK_THROWS_AS(io::load_tensor<float>(path), IoError);
    }

    fs::remove_all(dir);
}
