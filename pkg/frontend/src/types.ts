/** Payload shapes of the session service.
 *
 * The service is the single source of truth for every clinical number;
 * the client renders these documents and never derives quantities from
 * pixels itself.
 */

export interface VolumeInfo {
  path: string;
  shape: number[];
  spacing: number[];
  origin: number[];
}

export interface CenterlineDoc {
  id: string;
  branch_label: string | null;
  points: number[][];
  warnings: string[];
}

export interface ExtractResponse {
  id: string;
  centerline: CenterlineDoc;
  total_length: number;
}

export interface EditCenterlineResponse extends ExtractResponse {
  stale_marked: string[];
}

export interface MarkersDoc {
  centerline_id: string;
  proximal_s: number;
  distal_s: number;
}

export interface MarkersResponse {
  markers: MarkersDoc;
  stale_marked: string[];
}

export interface SurfaceDoc {
  kind: "inner" | "outer";
  step_s: number;
  arclengths: number[];
  radii: number[][];
}

export interface SurfaceResponse {
  surface_id: string;
  surface: SurfaceDoc;
}

export interface CorrectResponse extends SurfaceResponse {
  stale_marked: string[];
  paired_surface?: SurfaceDoc;
}

export interface PreviewResponse {
  arclength: number;
  threshold: number;
  angles_n: number;
  inner_radii: number[];
  raw_outer_radii: number[];
}

export interface Thresholds {
  t_lipid_fib: number;
  t_fib_calc: number;
}

export interface StenosisDoc {
  arclengths: number[];
  lumen_areas: number[];
  vessel_areas: number[];
  stenosis_per_position: number[];
  stenosis_area_pct: number;
  stenosis_arclength: number;
  remodeling_index: number;
}

export type ClassCounts = {
  lipid_rich: number;
  fibrotic: number;
  calcified: number;
};

export interface ReportDoc {
  lesion_id: string;
  thresholds: Thresholds;
  voxel_count: number;
  voxel_volume_mm3: number;
  counts: ClassCounts;
  volumes_mm3: ClassCounts & { total: number };
  stenosis: StenosisDoc;
  histogram: [number, number][]; // [bin_start_hu, voxel_count]
  low_attenuation_flag: boolean;
  napkin_ring_flag: boolean;
  stale: boolean;
}

export interface FatRoisResponse {
  fat_roi_ids: string[];
  notices: string[];
}

export interface FatStatsDoc {
  mean_hu?: number | null;
  total_count: number;
  in_window_count: number;
  window: [number, number];
  roi_volume_mm3: number;
  histogram: [number, number][];
  stale?: boolean;
}

export interface RunResult {
  skipped: boolean;
  lesions?: string[];
  centerline_id?: string;
  lesion_id?: string;
  report?: ReportDoc;
}

export interface ConstraintDoc {
  s: number;
  theta: number;
  target_radius: number;
  sigma_s?: number;
  sigma_theta?: number;
}

export type ExtractMode = "single_seed" | "two_seed";
