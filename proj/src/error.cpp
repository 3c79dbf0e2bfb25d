// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#include "square/error.hpp"

namespace square {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::DimMismatch: return "DimMismatch";
        case ErrorCode::DuplicateId: return "DuplicateId";
        case ErrorCode::TruncatedFile: return "TruncatedFile";
        case ErrorCode::TrailingData: return "TrailingData";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::ZeroVector: return "ZeroVector";
        case ErrorCode::AlphaOutOfRange: return "AlphaOutOfRange";
        case ErrorCode::BetaOutOfRange: return "BetaOutOfRange";
        case ErrorCode::EmptyGallery: return "EmptyGallery";
        case ErrorCode::UnknownId: return "UnknownId";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::EmptyImage: return "EmptyImage";
        case ErrorCode::WrongCount: return "WrongCount";
        case ErrorCode::ImageDecode: return "ImageDecode";
        case ErrorCode::ApiTimeout: return "ApiTimeout";
        case ErrorCode::ApiRefusal: return "ApiRefusal";
        case ErrorCode::EmptyCompletion: return "EmptyCompletion";
        case ErrorCode::TransportError: return "TransportError";
        case ErrorCode::ApiError: return "ApiError";
        case ErrorCode::DuplicateIndex: return "DuplicateIndex";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::EmptyTargets: return "EmptyTargets";
        case ErrorCode::MissingRanking: return "MissingRanking";
        case ErrorCode::MissingSubset: return "MissingSubset";
        case ErrorCode::MissingEmbedding: return "MissingEmbedding";
        case ErrorCode::MissingImage: return "MissingImage";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::ParseError: return "ParseError";
    }
    return "Unknown";
}

}  // namespace square
