package app;

import java.io.PrintStream;

public class Report {
    private final Settings cfg;
    private final Inventory inventory;

    public Report(Settings settings, Inventory inventory) {
        this.cfg = settings;
        this.inventory = inventory;
    }

    public String title() {
        return "Inventory report";
    }

    public String footer() {
        return "-- end of report --";
    }

    public int width() {
        return 80;
    }

    public void print(PrintStream out) {
        out.println(title());
        out.println("items: " + inventory.countItems());
        out.println("quantity: " + inventory.totalQuantity());
    }

    public String separator() {
        return "=".repeat(width());
    }

    public boolean verbose() {
        return cfg.verbose();
    }

    public String locale() {
        return cfg.locale();
    }
}
