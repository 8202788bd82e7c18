#pragma once

#include <cmath>
#include <string>

#include "hedonic/transaction.hpp"

namespace testsupport {

// A valid, cleaned purchase row near Bologna.
inline hedonic::Transaction make_row(const std::string& id, double price = 150000.0, double surface = 90.0,
                                     double income = 3000.0) {
    hedonic::Transaction t;
    t.id = id;
    t.price = price;
    t.log_price = std::log(price);
    t.issuance_date = hedonic::Date(2020, 6, 1);
    t.monthly_income = income;
    t.log_income = std::log(income);
    t.surface_m2 = surface;
    t.log_surface = std::log(surface);
    t.garage = hedonic::Tristate::no;
    t.annex = hedonic::Tristate::no;
    t.aircon = hedonic::Tristate::missing;
    t.cadastral_code = hedonic::CadastralCode::A02;
    t.lat = 44.49;
    t.lon = 11.34;
    return t;
}

inline bool rel_close(double a, double b, double rel, double abs_floor = 0.0) {
    return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
}

}  // namespace testsupport
