/** What the operator is looking at. Pure client state; nothing here is a
 * clinical quantity.
 */

export type ViewKind = "axial" | "cpr" | "cross_section";

export interface Overlays {
  centerline: boolean;
  inner: boolean;
  outer: boolean;
  plaque: boolean;
  fat: boolean;
  dei: boolean;
}

export class ViewState {
  projectId: string | null = null;
  view: ViewKind = "axial";
  readonly overlays: Overlays = {
    centerline: true,
    inner: true,
    outer: true,
    plaque: false,
    fat: false,
    dei: false,
  };

  private _s = 0;
  private sLo = 0;
  private sHi = 0;
  private _windowLevel = 150;
  private _windowWidth = 700;

  get s(): number {
    return this._s;
  }

  /** Valid cross-section positions follow the centerline's arclength span. */
  setSRange(lo: number, hi: number): void {
    if (!(lo <= hi)) {
      throw new RangeError("arclength range must be ordered");
    }
    this.sLo = lo;
    this.sHi = hi;
    this._s = Math.min(Math.max(this._s, lo), hi);
  }

  set s(value: number) {
    this._s = Math.min(Math.max(value, this.sLo), this.sHi);
  }

  get windowLevel(): number {
    return this._windowLevel;
  }

  get windowWidth(): number {
    return this._windowWidth;
  }

  setWindow(level: number, width: number): void {
    if (!(width > 0)) {
      throw new RangeError("window width must be positive");
    }
    this._windowLevel = level;
    this._windowWidth = width;
  }

  toggle(name: keyof Overlays): boolean {
    this.overlays[name] = !this.overlays[name];
    return this.overlays[name];
  }
}
