#pragma once

#include "primfuse/semantic_volume.hpp"

#include <iosfwd>
#include <string>

namespace primfuse {

/// One declarative editing command:
///   delete <plane_id>
///   transform <plane_id> <16 row-major matrix values>
///   transform_region <min x y z> <max x y z> <16 row-major matrix values>
struct EditCommand {
    enum class Type { Delete, TransformPlane, TransformRegion };
    Type type = Type::Delete;
    int plane_id = 0;
    Vec3 aabb_min = Vec3::Zero(), aabb_max = Vec3::Zero();
    EditOp op;
};

std::vector<EditCommand> parse_edit_script(std::istream& is);
std::vector<EditCommand> parse_edit_script_file(const std::string& path);

struct EditApplyResult {
    EditState state;
    int deletions = 0;
    int transforms = 0;
    std::int64_t voxels_cleared = 0;
};

/// Executes the script: deletions rewrite the volume and registry,
/// transforms populate the returned editing volume. Referenced planes must
/// exist.
EditApplyResult apply_edit_script(const std::vector<EditCommand>& commands, SemanticVolume& vol,
                                  Registry& reg);

}  // namespace primfuse
